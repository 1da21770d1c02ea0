#pragma once

#include "zinflate/tps_basis.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace zinflate {

/// Regression coefficients: beta drives the excess-zero probability phi(s),
/// gamma the Poisson intensity lambda(s). Both include an intercept.
struct ThetaParams {
    Eigen::VectorXd beta;
    Eigen::VectorXd gamma;

    [[nodiscard]] Eigen::Index size() const noexcept { return beta.size() + gamma.size(); }
    [[nodiscard]] Eigen::VectorXd stacked() const;
    static ThetaParams unstack(const Eigen::VectorXd& theta, Eigen::Index beta_size);
};

/// Zero-inflated count observations at spatial sites.
///
/// `x` carries a leading column of ones. `v_mask` and `u_mask` list the
/// columns of `x` entering the phi- and lambda-models; both contain column 0.
struct SpatialDataset {
    std::vector<Location> locations;
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::vector<Eigen::Index> v_mask;
    std::vector<Eigen::Index> u_mask;
    std::vector<std::string> covariate_names;  ///< names of x columns 1..p

    [[nodiscard]] Eigen::Index size() const noexcept { return y.size(); }
    [[nodiscard]] Eigen::MatrixXd v_design() const;
    [[nodiscard]] Eigen::MatrixXd u_design() const;
    /// Subset of rows, preserving order.
    [[nodiscard]] SpatialDataset subset(const std::vector<Eigen::Index>& rows) const;
    /// Throws on broken invariants (negative or fractional y, missing intercept, bad masks).
    void validate() const;
};

/// Masks selecting every column of an n x (p+1) design.
std::vector<Eigen::Index> all_columns(Eigen::Index cols);

struct ModelState {
    Eigen::VectorXd phi;
    Eigen::VectorXd lambda;
    Eigen::VectorXd z1;
    Eigen::VectorXd z2;
    Eigen::VectorXd var_z1;
    Eigen::VectorXd var_z2;

    /// (Z1', Z2')'
    [[nodiscard]] Eigen::VectorXd stacked_z() const;
};

inline constexpr double kLinearPredictorClamp = 30.0;

double link_phi(const Eigen::Ref<const Eigen::VectorXd>& v_row, const Eigen::Ref<const Eigen::VectorXd>& beta);
double link_lambda(const Eigen::Ref<const Eigen::VectorXd>& u_row, const Eigen::Ref<const Eigen::VectorXd>& gamma);

/// logistic(eta) and exp(eta) after clamping eta to [-30, 30].
double logistic_clamped(double eta);
double exp_clamped(double eta);

/// Zero-truncated Poisson mean lambda / (1 - e^-lambda).
double truncated_mean(double lambda);
/// (1 - (1 + lambda) e^-lambda) / (1 - e^-lambda)^2
double truncated_mean_slope(double lambda);
/// (lambda + lambda^2) / (1 - e^-lambda) - truncated_mean^2
double truncated_variance(double lambda);

ModelState residuals(const SpatialDataset& ds, const ThetaParams& theta);

/// dZ/dtheta as a 2n x (q1 + q2 + 2) matrix: rows (Z1 sites, Z2 sites), columns (beta, gamma).
Eigen::MatrixXd derivative_matrix(const SpatialDataset& ds, const ThetaParams& theta);

}  // namespace zinflate
