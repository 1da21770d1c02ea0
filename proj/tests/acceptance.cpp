#include "zinflate/cli/commands.hpp"
#include "zinflate/error.hpp"
#include "zinflate/gee_fit.hpp"
#include "zinflate/inference.hpp"
#include "zinflate/lowrank_cov.hpp"
#include "zinflate/simgen.hpp"
#include "zinflate/zim_model.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

using namespace zinflate;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kBaseSeed = 1;

const std::array<const char*, 12> kNames = {"beta0",  "beta1",  "beta2",  "beta3",  "beta4",  "beta5",
                                            "gamma0", "gamma1", "gamma2", "gamma3", "gamma4", "gamma5"};

// Reference AIC means and s.d.s for n = 400, c = 0.3, 40% zeros.
const std::array<double, 12> kRefMean = {-0.708, -0.693, -0.716, -0.698, -0.687, -0.496,
                                         0.355,  0.304,  0.305,  0.304,  -0.323, 0.618};
const std::array<double, 12> kRefSd = {0.389, 0.256, 0.260, 0.250, 0.513, 0.419,
                                       0.162, 0.054, 0.060, 0.060, 0.106, 0.108};

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? std::nan("") : s / static_cast<double>(xs.size());
}

double sd_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::nan("");
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::vector<const cli::ReplicateRecord*> successful(const cli::ReplicateSummary& s, bool converged_only = false) {
    std::vector<const cli::ReplicateRecord*> out;
    for (const auto& r : s.records) {
        if (r.ok && (!converged_only || r.converged)) out.push_back(&r);
    }
    return out;
}

std::vector<double> column(const std::vector<const cli::ReplicateRecord*>& recs, Eigen::Index j) {
    std::vector<double> xs;
    for (const auto* r : recs) xs.push_back(r->theta_hat(j));
    return xs;
}

cli::RunConfig replicate_config(Eigen::Index n, ZeroInflation zi, double c, int reps, bool jackknife) {
    cli::RunConfig cfg;
    cfg.subcommand = cli::Subcommand::Replicate;
    SimScenario sc;
    sc.n = n;
    sc.zero_inflation = zi;
    sc.correlation_c = c;
    sc.seed = kBaseSeed;
    cfg.scenario = sc;
    cfg.reps = reps;
    cfg.jackknife = jackknife;
    cfg.blocks_B = 20;
    return cfg;
}

std::string fmt_num(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Criteria 1 and 2 share the medium-correlation AIC run.
std::pair<Outcome, Outcome> replicate_means_and_ranks() {
    const auto t0 = Clock::now();
    const cli::ReplicateSummary s = cli::run_replicates(replicate_config(400, ZeroInflation::P40, 0.3, 50, false));
    const double elapsed = seconds_since(t0);
    const auto ok = successful(s);
    const auto conv = successful(s, true);

    Outcome c1;
    c1.pass = ok.size() >= 40;
    int own_sd_hits = 0;
    std::string rows;
    for (Eigen::Index j = 0; j < 12; ++j) {
        const auto xs = column(ok, j);
        const double m = mean_of(xs);
        const double sd = sd_of(xs);
        const auto ju = static_cast<std::size_t>(j);
        const double tol = std::max(0.05, 3.0 * kRefSd[ju] / std::sqrt(50.0));
        const double own_tol = std::max(0.05, 3.0 * sd / std::sqrt(static_cast<double>(xs.size())));
        const double gap = std::abs(m - kRefMean[ju]);
        const bool hit = gap <= tol;
        own_sd_hits += gap <= own_tol ? 1 : 0;
        c1.pass = c1.pass && hit;
        const double conv_mean = mean_of(column(conv, j));
        rows += std::string("\n    ") + kNames[ju] + " mean " + fmt_num(m) + " sd " + fmt_num(sd) + " ref " +
                fmt_num(kRefMean[ju]) + " tol " + fmt_num(tol) + (hit ? " ok" : " MISS") + " (converged-only " +
                fmt_num(conv_mean) + ")";
    }
    c1.detail = std::to_string(ok.size()) + "/50 fits, " + std::to_string(conv.size()) + " converged, " +
                fmt_num(elapsed, 1) + " s total; " + std::to_string(own_sd_hits) +
                "/12 within the band from our own s.d." + rows;

    std::vector<double> k1, k2, it, it_conv;
    for (const auto* r : ok) {
        k1.push_back(static_cast<double>(r->k1));
        k2.push_back(static_cast<double>(r->k2));
        it.push_back(static_cast<double>(r->iterations));
        if (r->converged) it_conv.push_back(static_cast<double>(r->iterations));
    }
    const double mk1 = mean_of(k1);
    const double mk2 = mean_of(k2);
    const double mit = mean_of(it);

    cli::RunConfig fixed = replicate_config(400, ZeroInflation::P40, 0.3, 10, false);
    fixed.fit.k_selection = RankSelection::Fixed;
    fixed.fit.k1 = 30;
    fixed.fit.k2 = 30;
    const cli::ReplicateSummary sf = cli::run_replicates(fixed);
    bool fixed_exact = !successful(sf).empty();
    for (const auto* r : successful(sf)) fixed_exact = fixed_exact && r->k1 == 30 && r->k2 == 30;

    Outcome c2;
    const bool k1_ok = mk1 >= 6.0 && mk1 <= 10.0;
    const bool k2_ok = mk2 >= 7.0 && mk2 <= 11.0;
    const bool it_ok = mit >= 6.0 && mit <= 13.0;
    c2.pass = k1_ok && k2_ok && it_ok && fixed_exact;
    c2.detail = "mean K1 " + fmt_num(mk1, 2) + " (sd " + fmt_num(sd_of(k1), 2) + ")" + (k1_ok ? "" : " MISS") +
                ", mean K2 " + fmt_num(mk2, 2) + " (sd " + fmt_num(sd_of(k2), 2) + ")" + (k2_ok ? "" : " MISS") +
                ", mean iterations " + fmt_num(mit, 2) + (it_ok ? "" : " MISS") + " (converged-only " +
                fmt_num(mean_of(it_conv), 2) + "), fixed mode " + (fixed_exact ? "30/30 exact" : "NOT 30/30");
    return {c1, c2};
}

Outcome jackknife_coverage() {
    const auto t0 = Clock::now();
    const cli::ReplicateSummary s = cli::run_replicates(replicate_config(400, ZeroInflation::P70, 0.01, 50, true));
    const double elapsed = seconds_since(t0);
    const ThetaParams truth = preset_truth(ZeroInflation::P70);
    const Eigen::VectorXd th = truth.stacked();

    std::vector<const cli::ReplicateRecord*> with_jk;
    for (const auto* r : successful(s)) {
        if (r->jackknife) with_jk.push_back(r);
    }
    Outcome out;
    out.pass = with_jk.size() >= 40;
    double lo = 1.0;
    double hi = 0.0;
    std::string rows;
    for (Eigen::Index j = 0; j < 12; ++j) {
        std::vector<std::pair<Interval, double>> pairs;
        for (const auto* r : with_jk) pairs.push_back({r->jackknife->intervals[static_cast<std::size_t>(j)], th(j)});
        const double cov = pairs.empty() ? 0.0 : coverage_probability(pairs);
        lo = std::min(lo, cov);
        hi = std::max(hi, cov);
        const bool hit = cov >= 0.85 && cov <= 1.0;
        out.pass = out.pass && hit;
        rows += std::string(" ") + kNames[static_cast<std::size_t>(j)] + "=" + fmt_num(cov, 2) + (hit ? "" : "(MISS)");
    }
    out.detail = std::to_string(with_jk.size()) + "/50 replicates with intervals, coverage " + fmt_num(lo, 2) +
                 " to " + fmt_num(hi, 2) + ", " + fmt_num(elapsed, 1) + " s total;" + rows;
    return out;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
}

Eigen::MatrixXd random_psd(Eigen::Index k, std::mt19937_64& rng) {
    const Eigen::MatrixXd a = random_matrix(k, k, rng);
    return a * a.transpose() / static_cast<double>(k);
}

Outcome smw_oracle() {
    std::mt19937_64 rng(kBaseSeed);
    std::uniform_int_distribution<int> n_dist(10, 200);
    std::uniform_int_distribution<int> k_dist(1, 20);
    std::uniform_real_distribution<double> log_s2(std::log(0.1), std::log(10.0));
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const int n = n_dist(rng);
        const int k = std::min(k_dist(rng), n);
        const Eigen::MatrixXd psi = random_matrix(n, k, rng);
        const Eigen::MatrixXd omega = random_psd(k, rng);
        const double s2 = std::exp(log_s2(rng));
        const LowRankCovariance cov(psi, omega, s2);
        const Eigen::MatrixXd sigma = psi * omega * psi.transpose() + s2 * Eigen::MatrixXd::Identity(n, n);
        const Eigen::MatrixXd prod = sigma * cov.apply_inverse(Eigen::MatrixXd::Identity(n, n));
        worst = std::max(worst, (prod - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff());
    }

    const Eigen::Index n = 3000;
    const Eigen::Index k = 30;
    const Eigen::MatrixXd psi = random_matrix(n, k, rng);
    const Eigen::MatrixXd omega = random_psd(k, rng);
    const Eigen::VectorXd v = random_matrix(n, 1, rng);

    auto t0 = Clock::now();
    const LowRankCovariance cov(psi, omega, 0.7);
    const Eigen::VectorXd fast = smw_inverse_action(cov, v);
    const double smw_secs = seconds_since(t0);

    t0 = Clock::now();
    const Eigen::MatrixXd sigma = psi * omega * psi.transpose() + 0.7 * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd slow = sigma.llt().solve(v);
    const double dense_secs = seconds_since(t0);
    const double agree = (fast - slow).norm() / slow.norm();

    Outcome out;
    const double speedup = dense_secs / smw_secs;
    out.pass = worst < 1e-7 && speedup >= 10.0 && agree < 1e-8;
    out.detail = "max |Sigma Sigma^-1 - I| " + std::to_string(worst) + " over 100 instances; n=3000 K=30 SMW " +
                 fmt_num(smw_secs * 1e3, 2) + " ms vs dense " + fmt_num(dense_secs * 1e3, 1) + " ms (" +
                 fmt_num(speedup, 0) + "x), relative gap " + std::to_string(agree);
    return out;
}

Outcome gradient_oracle() {
    std::mt19937_64 rng(kBaseSeed + 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> p_dist(0, 5);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const int p = p_dist(rng);
        const Eigen::Index n = 30;
        SpatialDataset ds;
        for (Eigen::Index i = 0; i < n; ++i) ds.locations.push_back({unif(rng), unif(rng)});
        ds.x.resize(n, p + 1);
        ds.x.col(0).setOnes();
        if (p > 0) ds.x.rightCols(p) = random_matrix(n, p, rng);
        ds.v_mask = all_columns(p + 1);
        ds.u_mask = all_columns(p + 1);
        ThetaParams t;
        t.beta = 0.6 * random_matrix(p + 1, 1, rng);
        t.gamma = 0.6 * random_matrix(p + 1, 1, rng);
        ds.y.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lam = link_lambda(ds.x.row(i).transpose(), t.gamma);
            std::poisson_distribution<int> pois(lam);
            ds.y(i) = unif(rng) < link_phi(ds.x.row(i).transpose(), t.beta) ? 0.0 : pois(rng);
        }
        const Eigen::MatrixXd d = derivative_matrix(ds, t);
        const Eigen::VectorXd theta = t.stacked();
        for (Eigen::Index j = 0; j < theta.size(); ++j) {
            Eigen::VectorXd up = theta;
            Eigen::VectorXd dn = theta;
            up(j) += 1e-6;
            dn(j) -= 1e-6;
            const Eigen::VectorXd fd = (residuals(ds, ThetaParams::unstack(up, p + 1)).stacked_z() -
                                        residuals(ds, ThetaParams::unstack(dn, p + 1)).stacked_z()) /
                                       2e-6;
            worst = std::max(worst, (fd - d.col(j)).cwiseAbs().maxCoeff());
        }
    }
    return {worst < 1e-6, "max abs error " + std::to_string(worst) + " over 100 draws"};
}

Outcome moment_properties() {
    // 100 generated datasets of 100 sites; the standard errors use the
    // dataset-level means, which are independent across datasets.
    const int datasets = 100;
    std::vector<double> m1, m2, m12;
    for (int d = 0; d < datasets; ++d) {
        SimScenario sc;
        sc.n = 100;
        sc.seed = 9000 + static_cast<std::uint64_t>(d);
        const SimulatedData sim = generate_dataset(sc);
        const ModelState st = residuals(sim.data, sim.theta);
        m1.push_back(st.z1.mean());
        m2.push_back(st.z2.mean());
        m12.push_back(st.z1.cwiseProduct(st.z2).mean());
    }
    Outcome out;
    out.pass = true;
    const std::array<std::pair<const char*, const std::vector<double>*>, 3> stats = {
        {{"mean Z1", &m1}, {"mean Z2", &m2}, {"cov(Z1,Z2)", &m12}}};
    for (const auto& [name, xs] : stats) {
        const double m = mean_of(*xs);
        const double se = sd_of(*xs) / std::sqrt(static_cast<double>(datasets));
        const bool hit = std::abs(m) <= 3.0 * se;
        out.pass = out.pass && hit;
        out.detail += std::string(name) + " " + fmt_num(m, 4) + " (se " + fmt_num(se, 4) + ")" + (hit ? "" : " MISS") +
                      "; ";
    }
    out.detail += "10000 points";
    return out;
}

Outcome ml_closed_form() {
    std::mt19937_64 rng(kBaseSeed + 2);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_real_distribution<double> mag_dist(0.0, 0.1);
    double worst_gain = -1e300;
    for (int t = 0; t < 50; ++t) {
        const Eigen::MatrixXd psi = random_matrix(50, 5, rng);
        const Eigen::MatrixXd omega = random_psd(5, rng);
        const Eigen::MatrixXd sigma = psi * omega * psi.transpose() + 0.8 * Eigen::MatrixXd::Identity(50, 50);
        const Eigen::VectorXd z = sigma.llt().matrixL() * random_matrix(50, 1, rng);
        const MlEstimate est = ml_estimate(z, psi);
        const double best = LowRankCovariance(psi, est.omega, est.sigma2_xi).log_likelihood(z);
        const double scale = std::max(est.omega.norm(), est.sigma2_xi);
        for (int p = 0; p < 20; ++p) {
            const double mag = mag_dist(rng);
            Eigen::MatrixXd e = random_matrix(5, 5, rng);
            e = 0.5 * (e + e.transpose()).eval();
            // Project the perturbed Omega back onto the PSD cone.
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(est.omega + mag * scale * e / e.norm());
            const Eigen::MatrixXd om =
                es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
            const double s2 = est.sigma2_xi * (1.0 + mag * unif(rng));
            worst_gain = std::max(worst_gain, LowRankCovariance(psi, om, s2).log_likelihood(z) - best);
        }
    }
    return {worst_gain <= 1e-8, "largest perturbation gain " + std::to_string(worst_gain) + " over 50 x 20 draws"};
}

Outcome jackknife_formula() {
    std::mt19937_64 rng(kBaseSeed + 3);
    std::uniform_int_distribution<int> b_dist(2, 50);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Eigen::MatrixXd est = random_matrix(b_dist(rng), 12, rng);
        const Eigen::VectorXd v = jackknife_variance(est);
        const auto B = static_cast<double>(est.rows());
        for (Eigen::Index j = 0; j < est.cols(); ++j) {
            double mean = 0.0;
            for (Eigen::Index b = 0; b < est.rows(); ++b) mean += est(b, j);
            mean /= B;
            double ss = 0.0;
            for (Eigen::Index b = 0; b < est.rows(); ++b) ss += (est(b, j) - mean) * (est(b, j) - mean);
            worst = std::max(worst, std::abs(v(j) - (B - 1.0) / B * ss));
        }
    }
    Eigen::MatrixXd two(2, 1);
    two << 0.83, -0.41;
    const double closed = (0.83 + 0.41) * (0.83 + 0.41) / 4.0;
    const double b2_gap = std::abs(jackknife_variance(two)(0) - closed);
    return {worst <= 1e-12 && b2_gap <= 1e-12,
            "max gap to direct summation " + std::to_string(worst) + ", B=2 gap " + std::to_string(b2_gap)};
}

Outcome large_n_spot_check() {
    const int reps = 20;
    const auto t0 = Clock::now();
    const cli::ReplicateSummary s = cli::run_replicates(replicate_config(3000, ZeroInflation::P40, 0.3, reps, false));
    const double elapsed = seconds_since(t0);
    const auto ok = successful(s);
    std::vector<double> it, per_rep;
    for (const auto* r : ok) {
        it.push_back(static_cast<double>(r->iterations));
        per_rep.push_back(r->generate_seconds + r->fit_seconds);
    }
    const double g5 = mean_of(column(ok, 11));
    const double mit = mean_of(it);
    const double worst_time = per_rep.empty() ? 0.0 : *std::max_element(per_rep.begin(), per_rep.end());
    const bool g5_ok = std::abs(g5 - 0.625) <= 0.02;
    const bool it_ok = mit <= 8.0;
    const bool time_ok = worst_time < 300.0;
    Outcome out;
    out.pass = ok.size() >= 15 && g5_ok && it_ok && time_ok;
    out.detail = std::to_string(ok.size()) + "/" + std::to_string(reps) + " fits, mean gamma5 " + fmt_num(g5) +
                 " (sd " + fmt_num(sd_of(column(ok, 11))) + ")" + (g5_ok ? "" : " MISS") + ", mean iterations " +
                 fmt_num(mit, 2) + (it_ok ? "" : " MISS") + ", slowest replicate " + fmt_num(worst_time, 1) + " s" +
                 (time_ok ? "" : " MISS") + ", " + fmt_num(elapsed, 1) + " s total";
    return out;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::err);
    if (const char* lvl = std::getenv("ZINFLATE_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

    int failures = 0;
    const auto report = [&](int id, const Outcome& o) {
        std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };
    const auto guarded = [&](int id, auto&& fn) {
        try {
            report(id, fn());
        } catch (const std::exception& e) {
            report(id, {false, std::string("threw: ") + e.what()});
        }
    };

    try {
        const auto [c1, c2] = replicate_means_and_ranks();
        report(1, c1);
        report(2, c2);
    } catch (const std::exception& e) {
        report(1, {false, std::string("threw: ") + e.what()});
        report(2, {false, "not run"});
    }
    guarded(3, jackknife_coverage);
    guarded(4, smw_oracle);
    guarded(5, gradient_oracle);
    guarded(6, moment_properties);
    guarded(7, ml_closed_form);
    guarded(8, jackknife_formula);
    guarded(9, large_n_spot_check);

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
