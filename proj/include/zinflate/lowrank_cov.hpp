#pragma once

#include "zinflate/tps_basis.hpp"

#include <Eigen/Dense>

#include <optional>

namespace zinflate {

/// Closed-form maximum-likelihood fit of Sigma = Psi Omega Psi' + sigma2 I to
/// a single residual vector.
struct MlEstimate {
    Eigen::MatrixXd omega;
    double sigma2_xi = 0.0;
    double trace_u = 0.0;        ///< tr(Z Z') = Z'Z
    Eigen::VectorXd moments;     ///< c_1 >= ... >= c_K
    Eigen::Index l_star = 0;
};

MlEstimate ml_estimate(const Eigen::VectorXd& z, const Eigen::MatrixXd& psi);

/// Operator interface for the GEE working covariance: only inverse actions are needed.
class WorkingCovariance {
public:
    virtual ~WorkingCovariance() = default;
    [[nodiscard]] virtual Eigen::Index dim() const = 0;
    [[nodiscard]] virtual Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& v) const = 0;
};

/// Sigma = Psi Omega Psi' + sigma2 I with inverse actions through the
/// Sherman-Morrison-Woodbury identity. Immutable; actions are thread-safe.
///
/// Omega is inverted on its positive-eigenvalue subspace, so rank-deficient
/// Omega (the usual outcome of eigenvalue clipping) is handled exactly. The
/// noise variance used by the actions is max(sigma2_xi, ridge_floor).
class LowRankCovariance {
public:
    LowRankCovariance(Eigen::MatrixXd psi, Eigen::MatrixXd omega, double sigma2_xi, double ridge_floor = 0.0);

    /// Uses a ridge floor of 1e-8 tr(U) / n.
    static LowRankCovariance from_estimate(Eigen::MatrixXd psi, const MlEstimate& est);

    [[nodiscard]] Eigen::Index size() const noexcept { return psi_.rows(); }
    [[nodiscard]] Eigen::Index rank() const noexcept { return psi_.cols(); }
    [[nodiscard]] const Eigen::MatrixXd& psi() const noexcept { return psi_; }
    [[nodiscard]] const Eigen::MatrixXd& omega() const noexcept { return omega_; }
    [[nodiscard]] double sigma2_xi() const noexcept { return sigma2_xi_; }
    [[nodiscard]] double effective_sigma2() const noexcept { return sigma2_eff_; }

    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& v) const;
    /// Throws SingularCore when the effective noise variance is zero.
    [[nodiscard]] Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& v) const;

    /// log det(Sigma) via the matrix-determinant lemma, O(n r^2 + r^3).
    [[nodiscard]] double log_det() const;
    /// Gaussian log-likelihood of z under N(0, Sigma).
    [[nodiscard]] double log_likelihood(const Eigen::VectorXd& z) const;
    [[nodiscard]] Eigen::MatrixXd dense() const;

private:
    void require_invertible() const;

    Eigen::MatrixXd psi_;
    Eigen::MatrixXd omega_;
    double sigma2_xi_;
    double sigma2_eff_;
    // Omega = V diag(lambda) V' restricted to lambda > 0; psi_pos_ = Psi V.
    Eigen::MatrixXd psi_pos_;
    Eigen::VectorXd omega_pos_;
    Eigen::LLT<Eigen::MatrixXd> core_;
    double log_det_core_ = 0.0;
};

Eigen::VectorXd smw_inverse_action(const LowRankCovariance& cov, const Eigen::VectorXd& v);

/// Block-diagonal covariance of (Z1', Z2')'. Off-diagonal blocks are zero.
class BlockCovariance final : public WorkingCovariance {
public:
    BlockCovariance(LowRankCovariance block1, LowRankCovariance block2);

    [[nodiscard]] const LowRankCovariance& block1() const noexcept { return block1_; }
    [[nodiscard]] const LowRankCovariance& block2() const noexcept { return block2_; }
    [[nodiscard]] Eigen::Index dim() const override { return 2 * block1_.size(); }
    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& v) const;
    [[nodiscard]] Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& v) const override;
    [[nodiscard]] Eigen::MatrixXd dense() const;

private:
    LowRankCovariance block1_;
    LowRankCovariance block2_;
};

/// Throws DimensionMismatch when the blocks live on different site counts.
BlockCovariance assemble_block(LowRankCovariance cov1, LowRankCovariance cov2);

/// Diagonal working covariance; used for the independence start.
class DiagonalCovariance final : public WorkingCovariance {
public:
    explicit DiagonalCovariance(Eigen::VectorXd variances);
    [[nodiscard]] Eigen::Index dim() const override { return variances_.size(); }
    [[nodiscard]] Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& v) const override;

private:
    Eigen::VectorXd variances_;
};

struct AicSelection {
    Eigen::Index k = 3;
    LowRankCovariance cov;
    Eigen::VectorXd aic;  ///< aic(i) is AIC at K = 3 + i
};

/// How AIC counts the free parameters of (Omega, sigma2) at rank K.
enum class AicPenalty {
    /// Omega estimated from one residual vector has rank <= 1, so it has
    /// K free parameters: p = K + 1 in total. The penalty carries the
    /// small-sample correction 2p + 2p(p+1)/(n-p-1), since the rank-one
    /// likelihood is unbounded as K approaches n.
    RankConstrained,
    /// Unconstrained symmetric Omega: p = K(K+1)/2 + 1, penalty 2p.
    FullSymmetric,
};

double aic_parameter_count(Eigen::Index K, AicPenalty penalty = AicPenalty::RankConstrained);

/// Additive AIC penalty at rank K on n sites; infinite when p >= n - 1 under RankConstrained.
double aic_penalty(Eigen::Index K, Eigen::Index n, AicPenalty penalty = AicPenalty::RankConstrained);

/// Selects K in [3, k_max] minimising -2 loglik + aic_penalty(K, n); ties go
/// to the smaller K. Throws RankOutOfRange when k_max < 3.
AicSelection aic_select(const Eigen::VectorXd& z, const TpsBasis& basis, Eigen::Index k_max,
                        AicPenalty penalty = AicPenalty::RankConstrained);

/// Fits (Omega, sigma2) at a fixed rank K using the basis at the data sites.
LowRankCovariance fit_fixed_rank(const Eigen::VectorXd& z, const TpsBasis& basis, Eigen::Index K);

}  // namespace zinflate
