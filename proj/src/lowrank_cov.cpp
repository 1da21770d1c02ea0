#include "zinflate/lowrank_cov.hpp"

#include "zinflate/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace zinflate {

namespace {

constexpr double kMaxGramCondition = 1e12;
constexpr double kRidgeFactor = 1e-8;
constexpr double kPsdTol = 1e-10;
constexpr double kPositiveTol = 1e-12;

// (Psi'Psi)^{-1/2}, with the ridge applied when the Gram matrix is ill-conditioned.
Eigen::MatrixXd inverse_sqrt_gram(const Eigen::MatrixXd& psi) {
    const Eigen::Index K = psi.cols();
    Eigen::MatrixXd gram = psi.transpose() * psi;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    auto condition = [](const Eigen::VectorXd& ev) {
        const double lo = ev.minCoeff();
        const double hi = ev.maxCoeff();
        return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    };
    if (condition(es.eigenvalues()) > kMaxGramCondition) {
        gram.diagonal().array() += 1e-10 * gram.trace() / static_cast<double>(K);
        es.compute(gram);
        if (condition(es.eigenvalues()) > kMaxGramCondition) {
            throw Error(ErrorKind::SingularGram, "Psi'Psi condition number exceeds 1e12");
        }
    }
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

}  // namespace

MlEstimate ml_estimate(const Eigen::VectorXd& z, const Eigen::MatrixXd& psi) {
    const Eigen::Index n = psi.rows();
    const Eigen::Index K = psi.cols();
    if (z.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "residual length differs from basis rows");
    }
    if (K < 1 || K > n) throw Error(ErrorKind::RankOutOfRange, "basis rank must lie in [1, n]");

    const Eigen::MatrixXd g_isqrt = inverse_sqrt_gram(psi);
    // U = ZZ' is never formed: M = w w' with w = (Psi'Psi)^{-1/2} Psi'Z.
    const Eigen::VectorXd w = g_isqrt * (psi.transpose() * z);
    const Eigen::MatrixXd m = w * w.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::EigenFailure, "moment matrix eigensolve");
    const Eigen::VectorXd c = es.eigenvalues().reverse();
    const Eigen::MatrixXd a = es.eigenvectors().rowwise().reverse();

    MlEstimate out;
    out.trace_u = z.squaredNorm();
    out.moments = c;
    const double tr = out.trace_u;

    // Largest L with c_L > max{(tr U - sum_{k<=L} c_k) / (n - L), 0}.
    Eigen::Index l_star = 0;
    for (Eigen::Index L = K; L >= 1; --L) {
        if (n - L <= 0) continue;
        const double rest = (tr - c.head(L).sum()) / static_cast<double>(n - L);
        if (c(L - 1) > std::max(rest, 0.0)) {
            l_star = L;
            break;
        }
    }
    out.l_star = l_star;
    // c_0 = 0, so the k = 0..L* sum equals the k = 1..L* sum.
    const double head_sum = l_star > 0 ? c.head(l_star).sum() : 0.0;
    out.sigma2_xi = std::max((tr - head_sum) / static_cast<double>(n - l_star), 0.0);

    const Eigen::VectorXd c_hat = (c.array() - out.sigma2_xi).max(0.0).matrix();
    const Eigen::MatrixXd left = g_isqrt * a;
    out.omega = left * c_hat.asDiagonal() * left.transpose();
    out.omega = 0.5 * (out.omega + out.omega.transpose()).eval();
    return out;
}

LowRankCovariance::LowRankCovariance(Eigen::MatrixXd psi, Eigen::MatrixXd omega, double sigma2_xi,
                                     double ridge_floor)
    : psi_(std::move(psi)), omega_(std::move(omega)), sigma2_xi_(sigma2_xi) {
    const Eigen::Index K = psi_.cols();
    if (omega_.rows() != K || omega_.cols() != K) {
        throw Error(ErrorKind::DimensionMismatch, "Omega must be K x K with K = Psi columns");
    }
    if (!(sigma2_xi_ >= 0.0) || !std::isfinite(sigma2_xi_)) {
        throw Error(ErrorKind::InvalidArgument, "sigma2_xi must be finite and nonnegative");
    }
    sigma2_eff_ = std::max(sigma2_xi_, ridge_floor);

    omega_ = 0.5 * (omega_ + omega_.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega_);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::EigenFailure, "Omega eigensolve");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double top = K > 0 ? std::max(lam.maxCoeff(), 0.0) : 0.0;
    if (K > 0 && lam.minCoeff() < -kPsdTol * std::max(top, 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "Omega is not positive semidefinite");
    }

    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (top > 0.0 && lam(k) > kPositiveTol * top) keep.push_back(k);
    }
    const auto r = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd v(K, r);
    omega_pos_.resize(r);
    for (Eigen::Index j = 0; j < r; ++j) {
        v.col(j) = es.eigenvectors().col(keep[static_cast<std::size_t>(j)]);
        omega_pos_(j) = lam(keep[static_cast<std::size_t>(j)]);
    }
    psi_pos_ = psi_ * v;

    if (sigma2_eff_ > 0.0 && r > 0) {
        Eigen::MatrixXd core = psi_pos_.transpose() * psi_pos_ / sigma2_eff_;
        core.diagonal() += omega_pos_.cwiseInverse();
        core_.compute(core);
        if (core_.info() != Eigen::Success) {
            throw Error(ErrorKind::SingularCore, "Omega^-1 + Psi'Psi / sigma2 is not invertible");
        }
        log_det_core_ = 2.0 * core_.matrixLLT().diagonal().array().log().sum();
    }
}

LowRankCovariance LowRankCovariance::from_estimate(Eigen::MatrixXd psi, const MlEstimate& est) {
    const auto n = static_cast<double>(psi.rows());
    return {std::move(psi), est.omega, est.sigma2_xi, kRidgeFactor * est.trace_u / n};
}

void LowRankCovariance::require_invertible() const {
    if (!(sigma2_eff_ > 0.0)) {
        throw Error(ErrorKind::SingularCore, "noise variance is zero; Sigma is singular");
    }
}

Eigen::MatrixXd LowRankCovariance::apply(const Eigen::MatrixXd& v) const {
    if (v.rows() != size()) throw Error(ErrorKind::DimensionMismatch, "vector length differs from n");
    Eigen::MatrixXd out = sigma2_eff_ * v;
    out.noalias() += psi_ * (omega_ * (psi_.transpose() * v));
    return out;
}

Eigen::MatrixXd LowRankCovariance::apply_inverse(const Eigen::MatrixXd& v) const {
    if (v.rows() != size()) throw Error(ErrorKind::DimensionMismatch, "vector length differs from n");
    require_invertible();
    Eigen::MatrixXd out = v / sigma2_eff_;
    if (omega_pos_.size() == 0) return out;
    const Eigen::MatrixXd proj = psi_pos_.transpose() * v;
    out.noalias() -= psi_pos_ * core_.solve(proj) / (sigma2_eff_ * sigma2_eff_);
    return out;
}

double LowRankCovariance::log_det() const {
    require_invertible();
    // det(s2 I + P C P') = s2^n det(C) det(C^-1 + P'P / s2)
    double value = static_cast<double>(size()) * std::log(sigma2_eff_);
    if (omega_pos_.size() > 0) value += omega_pos_.array().log().sum() + log_det_core_;
    return value;
}

double LowRankCovariance::log_likelihood(const Eigen::VectorXd& z) const {
    const double quad = z.dot(apply_inverse(z).col(0));
    const auto n = static_cast<double>(size());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det() + quad);
}

Eigen::MatrixXd LowRankCovariance::dense() const {
    Eigen::MatrixXd out = psi_ * omega_ * psi_.transpose();
    out.diagonal().array() += sigma2_eff_;
    return out;
}

Eigen::VectorXd smw_inverse_action(const LowRankCovariance& cov, const Eigen::VectorXd& v) {
    return cov.apply_inverse(v).col(0);
}

BlockCovariance::BlockCovariance(LowRankCovariance block1, LowRankCovariance block2)
    : block1_(std::move(block1)), block2_(std::move(block2)) {
    if (block1_.size() != block2_.size()) {
        throw Error(ErrorKind::DimensionMismatch, "blocks are built on different site counts (" +
                                                      std::to_string(block1_.size()) + " vs " +
                                                      std::to_string(block2_.size()) + ")");
    }
}

Eigen::MatrixXd BlockCovariance::apply(const Eigen::MatrixXd& v) const {
    const Eigen::Index n = block1_.size();
    if (v.rows() != 2 * n) throw Error(ErrorKind::DimensionMismatch, "vector length differs from 2n");
    Eigen::MatrixXd out(v.rows(), v.cols());
    out.topRows(n) = block1_.apply(v.topRows(n));
    out.bottomRows(n) = block2_.apply(v.bottomRows(n));
    return out;
}

Eigen::MatrixXd BlockCovariance::apply_inverse(const Eigen::MatrixXd& v) const {
    const Eigen::Index n = block1_.size();
    if (v.rows() != 2 * n) throw Error(ErrorKind::DimensionMismatch, "vector length differs from 2n");
    Eigen::MatrixXd out(v.rows(), v.cols());
    out.topRows(n) = block1_.apply_inverse(v.topRows(n));
    out.bottomRows(n) = block2_.apply_inverse(v.bottomRows(n));
    return out;
}

Eigen::MatrixXd BlockCovariance::dense() const {
    const Eigen::Index n = block1_.size();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    out.topLeftCorner(n, n) = block1_.dense();
    out.bottomRightCorner(n, n) = block2_.dense();
    return out;
}

BlockCovariance assemble_block(LowRankCovariance cov1, LowRankCovariance cov2) {
    return {std::move(cov1), std::move(cov2)};
}

DiagonalCovariance::DiagonalCovariance(Eigen::VectorXd variances) : variances_(std::move(variances)) {
    if ((variances_.array() <= 0.0).any() || !variances_.allFinite()) {
        throw Error(ErrorKind::SingularCore, "diagonal working variances must be positive");
    }
}

Eigen::MatrixXd DiagonalCovariance::apply_inverse(const Eigen::MatrixXd& v) const {
    if (v.rows() != variances_.size()) throw Error(ErrorKind::DimensionMismatch, "vector length");
    return variances_.cwiseInverse().asDiagonal() * v;
}

double aic_parameter_count(Eigen::Index K, AicPenalty penalty) {
    const auto k = static_cast<double>(K);
    if (penalty == AicPenalty::RankConstrained) return k + 1.0;
    return k * (k + 1.0) / 2.0 + 1.0;
}

double aic_penalty(Eigen::Index K, Eigen::Index n, AicPenalty penalty) {
    const double p = aic_parameter_count(K, penalty);
    if (penalty == AicPenalty::FullSymmetric) return 2.0 * p;
    const double slack = static_cast<double>(n) - p - 1.0;
    if (slack <= 0.0) return std::numeric_limits<double>::infinity();
    return 2.0 * p + 2.0 * p * (p + 1.0) / slack;
}

AicSelection aic_select(const Eigen::VectorXd& z, const TpsBasis& basis, Eigen::Index k_max, AicPenalty penalty) {
    const Eigen::Index n = basis.size();
    if (k_max < 3) throw Error(ErrorKind::RankOutOfRange, "AIC search range is empty (K_max < 3)");
    if (z.size() != n) throw Error(ErrorKind::DimensionMismatch, "residual length differs from basis");
    if (k_max > basis.max_rank()) {
        throw Error(ErrorKind::RankOutOfRange, "K_max=" + std::to_string(k_max) +
                                                   " exceeds usable basis rank " +
                                                   std::to_string(basis.max_rank()));
    }

    // The moment matrix built from one residual vector has rank one, so the
    // ML fit at rank K depends on Z only through c(K) = ||P_K Z||^2. At the
    // data sites the basis is [Delta | a_1..a_{K-3}] with orthonormal a_k
    // orthogonal to Delta, which makes c(K) a running sum.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis.delta());
    const Eigen::MatrixXd q0 = qr.householderQ() * Eigen::MatrixXd::Identity(n, 3);
    const Eigen::VectorXd coef = basis.eigvecs().leftCols(k_max - 3).transpose() * z;

    const double tr = z.squaredNorm();
    const double ridge = kRidgeFactor * tr / static_cast<double>(n);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const auto nn = static_cast<double>(n);

    Eigen::VectorXd aic(k_max - 2);
    double c = (q0.transpose() * z).squaredNorm();
    for (Eigen::Index K = 3; K <= k_max; ++K) {
        if (K > 3) c += coef(K - 4) * coef(K - 4);
        double log_det = 0.0;
        double quad = 0.0;
        if (n > 1 && c > std::max((tr - c) / (nn - 1.0), 0.0)) {
            const double s2 = std::max((tr - c) / (nn - 1.0), 0.0);
            const double s2e = std::max(s2, ridge);
            const double spike = s2e + (c - s2);
            log_det = (nn - 1.0) * std::log(s2e) + std::log(spike);
            quad = (tr - c) / s2e + c / spike;
        } else {
            const double s2e = std::max(tr / nn, ridge);
            log_det = nn * std::log(s2e);
            quad = tr / s2e;
        }
        const double loglik = -0.5 * (nn * log2pi + log_det + quad);
        aic(K - 3) = -2.0 * loglik + aic_penalty(K, n, penalty);
    }

    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < aic.size(); ++i) {
        if (aic(i) < aic(best)) best = i;
    }
    const Eigen::Index k_hat = best + 3;
    Eigen::MatrixXd psi = basis.at_sites(k_hat);
    MlEstimate est = ml_estimate(z, psi);
    return {k_hat, LowRankCovariance::from_estimate(std::move(psi), est), std::move(aic)};
}

LowRankCovariance fit_fixed_rank(const Eigen::VectorXd& z, const TpsBasis& basis, Eigen::Index K) {
    Eigen::MatrixXd psi = basis.at_sites(K);
    MlEstimate est = ml_estimate(z, psi);
    return LowRankCovariance::from_estimate(std::move(psi), est);
}

}  // namespace zinflate
