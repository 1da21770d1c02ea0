#include "zinflate/gee_fit.hpp"

#include "zinflate/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace zinflate {

namespace {

constexpr double kMaxJacobianCondition = 1e12;
constexpr int kMaxHalvings = 10;
constexpr double kScoreGrowthLimit = 10.0;

struct ScoreParts {
    Eigen::MatrixXd jacobian;  // D' Sigma^-1 D
    Eigen::VectorXd score;     // D' Sigma^-1 Z
};

ScoreParts score_parts(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov) {
    const ModelState st = residuals(ds, theta);
    const Eigen::MatrixXd d = derivative_matrix(ds, theta);
    if (cov.dim() != d.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "working covariance dimension differs from 2n");
    }
    const Eigen::MatrixXd w = cov.apply_inverse(d);
    return {d.transpose() * w, w.transpose() * st.stacked_z()};
}

double score_inf_norm(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov) {
    return gee_score(ds, theta, cov).lpNorm<Eigen::Infinity>();
}

DiagonalCovariance independence_covariance(const ModelState& st) {
    const Eigen::Index n = st.z1.size();
    Eigen::VectorXd var(2 * n);
    var << st.var_z1, st.var_z2;
    var = var.cwiseMax(std::numeric_limits<double>::min());
    return DiagonalCovariance(std::move(var));
}

}  // namespace

void FitConfig::validate(Eigen::Index n) const {
    if (!(epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
    if (max_outer_iters < 1) throw Error(ErrorKind::InvalidArgument, "max_outer_iters must be >= 1");
    if (k_selection == RankSelection::Fixed) {
        for (Eigen::Index k : {k1, k2}) {
            if (k < 3 || k > n) {
                throw Error(ErrorKind::RankOutOfRange,
                            "fixed rank " + std::to_string(k) + " outside [3, " + std::to_string(n) + "]");
            }
        }
    }
}

ThetaParams initial_theta(const SpatialDataset& ds, double epsilon, int max_iters) {
    const Eigen::Index n = ds.size();
    Eigen::Index zeros = 0;
    double positive_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (ds.y(i) == 0.0) {
            ++zeros;
        } else {
            positive_sum += ds.y(i);
        }
    }
    if (zeros == 0 || zeros == n) {
        throw Error(ErrorKind::DegenerateData, zeros == 0 ? "no zero counts" : "all counts are zero");
    }
    const double zero_share = static_cast<double>(zeros) / static_cast<double>(n);
    const double positive_mean = positive_sum / static_cast<double>(n - zeros);

    ThetaParams theta;
    theta.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.v_mask.size()));
    theta.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.u_mask.size()));
    const double p0 = std::max(zero_share, 0.01);
    theta.beta(0) = std::log(p0 / (1.0 - p0));
    theta.gamma(0) = std::log(std::max(positive_mean, 0.1));

    for (int it = 0; it < max_iters; ++it) {
        const DiagonalCovariance cov = independence_covariance(residuals(ds, theta));
        ThetaParams next;
        try {
            next = newton_step(ds, theta, cov);
        } catch (const Error& e) {
            // A Jacobian that degenerates after progress means an estimate
            // running to the boundary; keep the last finite iterate as a start.
            if (it == 0 || e.kind() != ErrorKind::SingularJacobian) throw;
            spdlog::debug("independence start stopped at iteration {}: {}", it, e.what());
            break;
        }
        const double change = (next.stacked() - theta.stacked()).lpNorm<1>();
        theta = std::move(next);
        if (change < epsilon) break;
    }
    return theta;
}

Eigen::VectorXd gee_score(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov) {
    const ModelState st = residuals(ds, theta);
    const Eigen::MatrixXd d = derivative_matrix(ds, theta);
    if (cov.dim() != d.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "working covariance dimension differs from 2n");
    }
    return d.transpose() * cov.apply_inverse(st.stacked_z());
}

NewtonOutcome newton_update(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov) {
    const ScoreParts parts = score_parts(ds, theta, cov);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(parts.jacobian, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || !(hi / lo <= kMaxJacobianCondition)) {
        throw Error(ErrorKind::SingularJacobian,
                    "D' Sigma^-1 D is singular or ill-conditioned (eigenvalues " + std::to_string(lo) + ", " +
                        std::to_string(hi) + ")");
    }

    NewtonOutcome out;
    out.score_norm = parts.score.lpNorm<Eigen::Infinity>();
    if (parts.score.isZero(0.0)) {
        out.theta = theta;
        return out;
    }

    const Eigen::VectorXd current = theta.stacked();
    Eigen::VectorXd step = parts.jacobian.ldlt().solve(parts.score);
    const Eigen::Index qb = theta.beta.size();
    for (int h = 0;; ++h) {
        const Eigen::VectorXd proposal = current - step;
        bool accept = proposal.allFinite();
        ThetaParams candidate = ThetaParams::unstack(proposal, qb);
        if (accept) {
            const double norm = score_inf_norm(ds, candidate, cov);
            accept = std::isfinite(norm) && norm <= kScoreGrowthLimit * out.score_norm;
        }
        if (accept || h == kMaxHalvings) {
            out.theta = proposal.allFinite() ? std::move(candidate) : theta;
            out.halvings = h;
            return out;
        }
        step *= 0.5;
    }
}

ThetaParams newton_step(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov) {
    return newton_update(ds, theta, cov).theta;
}

Eigen::Index required_eigenpairs(Eigen::Index n, const FitConfig& cfg) {
    const Eigen::Index top = cfg.k_selection == RankSelection::Aic ? default_rank_bound(n) : std::max(cfg.k1, cfg.k2);
    return std::clamp<Eigen::Index>(top - 3, 1, n);
}

TpsBasis build_basis_for(const SpatialDataset& ds, const FitConfig& cfg) {
    return TpsBasis::build(ds.locations, required_eigenpairs(ds.size(), cfg));
}

FitResult fit(const SpatialDataset& ds, const TpsBasis& basis, const FitConfig& cfg,
              const std::optional<ThetaParams>& warm_start) {
    ds.validate();
    const Eigen::Index n = ds.size();
    if (basis.size() != n) throw Error(ErrorKind::DimensionMismatch, "basis built on a different site count");
    cfg.validate(n);

    const Eigen::Index k_max = std::min(default_rank_bound(n), basis.max_rank());
    auto covariance_for = [&](const Eigen::VectorXd& z, Eigen::Index fixed_k) -> std::pair<Eigen::Index, LowRankCovariance> {
        if (cfg.k_selection == RankSelection::Aic) {
            AicSelection sel = aic_select(z, basis, k_max, cfg.aic_penalty);
            return {sel.k, std::move(sel.cov)};
        }
        return {fixed_k, fit_fixed_rank(z, basis, fixed_k)};
    };

    FitResult result;
    ThetaParams theta = warm_start ? *warm_start : initial_theta(ds, cfg.epsilon);
    std::optional<BlockCovariance> last_cov;
    // Iterate with the smallest change, returned when the loop does not converge.
    std::size_t best = 0;
    std::optional<BlockCovariance> best_cov;

    for (int it = 1; it <= cfg.max_outer_iters; ++it) {
        const ModelState st = residuals(ds, theta);
        auto [k1, cov1] = covariance_for(st.z1, cfg.k1);
        auto [k2, cov2] = covariance_for(st.z2, cfg.k2);
        last_cov.emplace(assemble_block(std::move(cov1), std::move(cov2)));

        NewtonOutcome step;
        try {
            step = newton_update(ds, theta, *last_cov);
        } catch (const Error& e) {
            if (it == 1 || e.kind() != ErrorKind::SingularJacobian) throw;
            spdlog::warn("GEE fit stopped at outer iteration {}: {}", it, e.what());
            break;
        }
        const double change = (step.theta.stacked() - theta.stacked()).lpNorm<1>();

        IterationRecord rec;
        rec.iteration = it;
        rec.theta = step.theta;
        rec.k1 = k1;
        rec.k2 = k2;
        rec.change = change;
        rec.score_norm = step.score_norm;
        rec.halvings = step.halvings;
        result.trace.push_back(std::move(rec));
        if (result.trace.size() == 1 || change < result.trace[best].change) {
            best = result.trace.size() - 1;
            best_cov = last_cov;
        }

        theta = std::move(step.theta);
        result.outer_iters = it;
        if (change < cfg.epsilon) {
            result.converged = true;
            break;
        }
    }

    const IterationRecord& chosen = result.trace[best];
    if (!result.converged) {
        spdlog::warn("GEE fit did not converge after {} outer iterations (smallest change {:.4g} at iteration {})",
                     result.outer_iters, chosen.change, chosen.iteration);
    }
    result.theta_hat = chosen.theta;
    result.k1 = chosen.k1;
    result.k2 = chosen.k2;
    const ModelState final_state = residuals(ds, result.theta_hat);
    result.phi_hat = final_state.phi;
    result.lambda_hat = final_state.lambda;
    result.final_score_norm = score_inf_norm(ds, result.theta_hat, *best_cov);
    return result;
}

}  // namespace zinflate
