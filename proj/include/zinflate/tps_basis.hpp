#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace zinflate {

/// Planar site coordinates.
struct Location {
    double s1 = 0.0;
    double s2 = 0.0;

    friend bool operator==(const Location&, const Location&) = default;
};

/// Thin-plate radial kernel r^2 log(r) / (8 pi); exactly 0 at r = 0.
double radial_phi(const Location& s, const Location& si);

/// Affine design Delta (n x 3) and radial kernel matrix Phi (n x n).
struct TpsDesign {
    Eigen::MatrixXd delta;
    Eigen::MatrixXd phi;
};

/// Throws DuplicateLocations or RankDeficientDelta; requires n >= 4.
TpsDesign build_design(std::span<const Location> locations);

/// Eigenpairs of Q Phi Q, eigenvalues non-increasing.
struct QphiqEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};

/// Symmetric eigendecomposition of Q Phi Q with Q = I - Delta (Delta'Delta)^-1 Delta'.
///
/// When `leading` is set only that many leading eigenpairs are computed. Each
/// eigenvector is sign-normalised so that its largest-magnitude entry is
/// positive.
QphiqEigen eigen_qphiq(const TpsDesign& design, std::optional<Eigen::Index> leading = std::nullopt);

/// Ordered multi-resolution thin-plate spline basis: {1, s1, s2} followed by
/// the scaled eigenfunctions of Q Phi Q. Immutable after construction.
class TpsBasis {
public:
    static TpsBasis build(std::vector<Location> locations,
                          std::optional<Eigen::Index> leading = std::nullopt);

    [[nodiscard]] Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(locations_.size()); }
    [[nodiscard]] const std::vector<Location>& locations() const noexcept { return locations_; }
    [[nodiscard]] const Eigen::MatrixXd& delta() const noexcept { return delta_; }
    [[nodiscard]] const Eigen::MatrixXd& phi_mat() const noexcept { return phi_; }
    [[nodiscard]] const Eigen::VectorXd& eigvals() const noexcept { return eigvals_; }
    [[nodiscard]] const Eigen::MatrixXd& eigvecs() const noexcept { return eigvecs_; }

    /// Largest K for which evaluate() succeeds: 3 plus the count of retained
    /// eigenvalues that are at least 1e-12 times the leading one.
    [[nodiscard]] Eigen::Index max_rank() const noexcept { return max_rank_; }

    /// m x K matrix of the first K basis functions at `points`.
    [[nodiscard]] Eigen::MatrixXd evaluate(Eigen::Index K, std::span<const Location> points) const;

    /// Basis at the data sites, [Delta | a_1 ... a_{K-3}]. Agrees with
    /// evaluate(K, locations()) because Q Phi a_k = Lambda_k a_k.
    [[nodiscard]] Eigen::MatrixXd at_sites(Eigen::Index K) const;

private:
    void check_rank(Eigen::Index K) const;

    std::vector<Location> locations_;
    Eigen::MatrixXd delta_;
    Eigen::MatrixXd phi_;
    Eigen::VectorXd eigvals_;
    Eigen::MatrixXd eigvecs_;
    // Phi Delta (Delta'Delta)^-1, used to project the radial part of new points.
    Eigen::MatrixXd phi_delta_gram_inv_;
    Eigen::Index max_rank_ = 3;
};

/// Free-function form of TpsBasis::evaluate.
Eigen::MatrixXd evaluate_basis(const TpsBasis& basis, Eigen::Index K, std::span<const Location> points);

/// Upper bound on the basis rank searched by AIC: min(ceil(10 sqrt(n)), n).
Eigen::Index default_rank_bound(Eigen::Index n);

}  // namespace zinflate
