#pragma once

#include "zinflate/lowrank_cov.hpp"
#include "zinflate/tps_basis.hpp"
#include "zinflate/zim_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace zinflate {

enum class RankSelection { Aic, Fixed };

struct FitConfig {
    double epsilon = 0.03;
    int max_outer_iters = 100;
    RankSelection k_selection = RankSelection::Aic;
    AicPenalty aic_penalty = AicPenalty::RankConstrained;
    Eigen::Index k1 = 30;  ///< used in Fixed mode
    Eigen::Index k2 = 30;
    std::uint64_t seed = 0;

    /// Throws InvalidArgument / RankOutOfRange for a dataset of n sites.
    void validate(Eigen::Index n) const;
};

struct IterationRecord {
    int iteration = 0;
    ThetaParams theta;
    Eigen::Index k1 = 0;
    Eigen::Index k2 = 0;
    double change = 0.0;       ///< sum |theta_new - theta_old|
    double score_norm = 0.0;   ///< ||U(theta_old)||_inf under this iteration's covariance
    int halvings = 0;
};

struct FitResult {
    ThetaParams theta_hat;
    Eigen::Index k1 = 0;
    Eigen::Index k2 = 0;
    int outer_iters = 0;
    bool converged = false;
    Eigen::VectorXd phi_hat;
    Eigen::VectorXd lambda_hat;
    std::vector<IterationRecord> trace;
    double final_score_norm = 0.0;  ///< ||U(theta_hat)||_inf under the last covariance
};

/// Independence-GEE starting value. Throws DegenerateData when y has no zeros
/// or no positive counts.
ThetaParams initial_theta(const SpatialDataset& ds, double epsilon = 0.03, int max_iters = 50);

/// U(theta) = D' Sigma^-1 Z.
Eigen::VectorXd gee_score(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov);

struct NewtonOutcome {
    ThetaParams theta;
    double score_norm = 0.0;  ///< ||U||_inf at the input theta
    int halvings = 0;
};

/// One Newton-Raphson update theta - (D' Sigma^-1 D)^-1 D' Sigma^-1 Z. The step
/// is halved (at most 10 times) while it is non-finite or grows ||U|| more
/// than tenfold. Throws SingularJacobian when cond(D' Sigma^-1 D) > 1e12.
NewtonOutcome newton_update(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov);

ThetaParams newton_step(const SpatialDataset& ds, const ThetaParams& theta, const WorkingCovariance& cov);

/// Number of leading eigenpairs a basis needs to serve `cfg` on n sites.
Eigen::Index required_eigenpairs(Eigen::Index n, const FitConfig& cfg);

/// Builds the basis on the dataset's sites, keeping only the eigenpairs `cfg` can use.
TpsBasis build_basis_for(const SpatialDataset& ds, const FitConfig& cfg);

/// Alternates covariance estimation (AIC-selected or fixed rank) with Newton
/// updates of theta until sum |delta theta| < epsilon. Non-convergence is
/// reported through `converged = false`, not thrown, and returns the iterate
/// with the smallest change. A Jacobian that turns singular after the first
/// outer iteration ends the loop the same way.
FitResult fit(const SpatialDataset& ds, const TpsBasis& basis, const FitConfig& cfg,
              const std::optional<ThetaParams>& warm_start = std::nullopt);

}  // namespace zinflate
