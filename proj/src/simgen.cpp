#include "zinflate/simgen.hpp"

#include "zinflate/error.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

namespace zinflate {

namespace {

enum Stream : std::uint32_t { kLocations = 1, kCovariates = 2, kBinaryField = 3, kCountField = 4 };

constexpr double kJitter = 1e-10;

}  // namespace

ThetaParams preset_truth(ZeroInflation level) {
    ThetaParams t;
    t.beta.resize(6);
    t.gamma.resize(6);
    if (level == ZeroInflation::P40) {
        t.beta << -0.7, -0.6, -0.6, -0.6, -0.5, -0.5;
        t.gamma << 0.4, 0.3, 0.3, 0.3, -0.3, 0.6;
    } else {
        t.beta << 0.5, 0.6, 0.5, 0.5, 0.5, -0.5;
        t.gamma << 0.3, -0.3, 0.5, -0.5, -0.6, 0.6;
    }
    return t;
}

ThetaParams SimScenario::truth() const {
    ThetaParams t = preset_truth(zero_inflation);
    if (beta_true.size() > 0) t.beta = beta_true;
    if (gamma_true.size() > 0) t.gamma = gamma_true;
    return t;
}

void SimScenario::validate() const {
    if (n < 20) throw Error(ErrorKind::InvalidArgument, "scenario needs n >= 20");
    if (!(sill > 0.0) || !(nugget > 0.0)) throw Error(ErrorKind::InvalidArgument, "sill and nugget must be positive");
    if (!(correlation_c > 0.0)) throw Error(ErrorKind::InvalidArgument, "correlation c must be positive");
    const ThetaParams t = truth();
    if (t.beta.size() != 6 || t.gamma.size() != 6) {
        throw Error(ErrorKind::DimensionMismatch, "scenario coefficients must have length 6");
    }
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return std::mt19937_64(seq);
}

std::vector<Location> sample_locations(Eigen::Index n, std::uint64_t seed) {
    constexpr std::int64_t total = kGridSide * kGridSide;
    if (n < 0 || n > total) throw Error(ErrorKind::InvalidArgument, "n must lie in [0, 1e8]");
    auto rng = make_stream(seed, kLocations);

    // Floyd's algorithm keeps insertion order deterministic for a given seed.
    std::unordered_set<std::int64_t> chosen;
    std::vector<std::int64_t> picks;
    chosen.reserve(static_cast<std::size_t>(n) * 2);
    picks.reserve(static_cast<std::size_t>(n));
    for (std::int64_t j = total - n; j < total; ++j) {
        std::uniform_int_distribution<std::int64_t> pick(0, j);
        std::int64_t t = pick(rng);
        if (!chosen.insert(t).second) {
            chosen.insert(j);
            t = j;
        }
        picks.push_back(t);
    }

    const double step = 1.0 / static_cast<double>(kGridSide - 1);
    std::vector<Location> out;
    out.reserve(picks.size());
    for (std::int64_t idx : picks) {
        out.push_back({static_cast<double>(idx % kGridSide) * step, static_cast<double>(idx / kGridSide) * step});
    }
    return out;
}

Eigen::MatrixXd exp_correlation_matrix(std::span<const Location> locations, double sill, double nugget,
                                       double range) {
    if (!(range > 0.0)) throw Error(ErrorKind::InvalidArgument, "range must be positive");
    const auto n = static_cast<Eigen::Index>(locations.size());
    const double partial = sill / (sill + nugget);
    Eigen::MatrixXd corr(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        corr(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double h = std::hypot(locations[i].s1 - locations[j].s1, locations[i].s2 - locations[j].s2);
            const double v = partial * std::exp(-h / range);
            corr(i, j) = v;
            corr(j, i) = v;
        }
    }
    return corr;
}

Eigen::VectorXd gaussian_copula_field(const Eigen::MatrixXd& corr, std::uint64_t seed) {
    const Eigen::Index n = corr.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    if (llt.info() != Eigen::Success) {
        Eigen::MatrixXd jittered = corr;
        jittered.diagonal().array() += kJitter;
        llt.compute(jittered);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorKind::FactorizationFailure, "correlation matrix is not positive semidefinite");
        }
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::VectorXd xi(n);
    for (Eigen::Index i = 0; i < n; ++i) xi(i) = normal(rng);
    return llt.matrixL() * xi;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

int poisson_quantile(double u, double mean) {
    const int cap = static_cast<int>(std::ceil(mean + 20.0 * std::sqrt(mean)));
    const double log_mean = std::log(mean);
    double log_p = -mean;
    double cdf = 0.0;
    for (int k = 0; k < cap; ++k) {
        if (k > 0) log_p += log_mean - std::log(static_cast<double>(k));
        cdf += std::exp(log_p);
        if (cdf >= u) return k;
    }
    return cap;
}

SimulatedData generate_dataset(const SimScenario& sc) {
    sc.validate();
    const Eigen::Index n = sc.n;
    SimulatedData out;
    out.theta = sc.truth();

    SpatialDataset& ds = out.data;
    ds.locations = sample_locations(n, sc.seed);
    ds.x.resize(n, 6);
    {
        auto rng = make_stream(sc.seed, kCovariates);
        std::normal_distribution<double> normal;
        std::bernoulli_distribution coin(0.5);
        for (Eigen::Index i = 0; i < n; ++i) {
            ds.x(i, 0) = 1.0;
            for (Eigen::Index j = 1; j <= 3; ++j) ds.x(i, j) = normal(rng);
            for (Eigen::Index j = 4; j <= 5; ++j) ds.x(i, j) = coin(rng) ? 1.0 : 0.0;
        }
    }
    ds.v_mask = all_columns(6);
    ds.u_mask = all_columns(6);
    ds.covariate_names = {"x1", "x2", "x3", "x4", "x5"};

    out.phi.resize(n);
    out.lambda.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.phi(i) = link_phi(ds.x.row(i).transpose(), out.theta.beta);
        out.lambda(i) = link_lambda(ds.x.row(i).transpose(), out.theta.gamma);
    }

    const auto seed_of = [&](Stream s) { return make_stream(sc.seed, s)(); };
    const Eigen::VectorXd w = gaussian_copula_field(
        exp_correlation_matrix(ds.locations, sc.sill, sc.nugget, sc.binary_range()), seed_of(kBinaryField));
    const Eigen::VectorXd v = gaussian_copula_field(
        exp_correlation_matrix(ds.locations, sc.sill, sc.nugget, sc.poisson_range()), seed_of(kCountField));

    ds.y.resize(n);
    out.structural_zero.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool zero = normal_cdf(w(i)) <= out.phi(i);
        out.structural_zero[static_cast<std::size_t>(i)] = zero ? 1 : 0;
        ds.y(i) = zero ? 0.0 : static_cast<double>(poisson_quantile(normal_cdf(v(i)), out.lambda(i)));
    }
    return out;
}

}  // namespace zinflate
