#include "zinflate/tps_basis.hpp"

#include "zinflate/error.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace zinflate {

namespace {

constexpr double kDuplicateTol = 1e-12;
constexpr double kEigenFloor = 1e-12;

void check_distinct(std::span<const Location> locations) {
    std::vector<std::size_t> order(locations.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return locations[a].s1 < locations[b].s1;
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Location& a = locations[order[i]];
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const Location& b = locations[order[j]];
            if (b.s1 - a.s1 > kDuplicateTol) break;
            if (std::abs(b.s2 - a.s2) <= kDuplicateTol) {
                throw Error(ErrorKind::DuplicateLocations,
                            "locations " + std::to_string(order[i]) + " and " +
                                std::to_string(order[j]) + " coincide");
            }
        }
    }
}

// Flip each column so its largest-magnitude entry is positive.
void normalise_signs(Eigen::MatrixXd& vectors) {
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
        Eigen::Index arg = 0;
        vectors.col(k).cwiseAbs().maxCoeff(&arg);
        if (vectors(arg, k) < 0.0) vectors.col(k) *= -1.0;
    }
}

}  // namespace

double radial_phi(const Location& s, const Location& si) {
    const double d1 = s.s1 - si.s1;
    const double d2 = s.s2 - si.s2;
    const double r2 = d1 * d1 + d2 * d2;
    if (r2 == 0.0) return 0.0;
    // r^2 log r = r^2 log(r^2) / 2
    return r2 * std::log(r2) / (16.0 * std::numbers::pi);
}

TpsDesign build_design(std::span<const Location> locations) {
    const auto n = static_cast<Eigen::Index>(locations.size());
    if (n < 4) {
        throw Error(ErrorKind::InvalidArgument, "need at least 4 locations, got " + std::to_string(n));
    }
    for (const auto& loc : locations) {
        if (!std::isfinite(loc.s1) || !std::isfinite(loc.s2)) {
            throw Error(ErrorKind::NonFiniteValue, "non-finite location coordinate");
        }
    }
    check_distinct(locations);

    TpsDesign design;
    design.delta.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        design.delta(i, 0) = 1.0;
        design.delta(i, 1) = locations[i].s1;
        design.delta(i, 2) = locations[i].s2;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design.delta);
    const auto& sv = svd.singularValues();
    if (sv(2) <= 1e-10 * sv(0)) {
        throw Error(ErrorKind::RankDeficientDelta, "locations are collinear");
    }

    design.phi.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        design.phi(j, j) = 0.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = radial_phi(locations[i], locations[j]);
            design.phi(i, j) = v;
            design.phi(j, i) = v;
        }
    }
    return design;
}

QphiqEigen eigen_qphiq(const TpsDesign& design, std::optional<Eigen::Index> leading) {
    const Eigen::Index n = design.phi.rows();
    const Eigen::Index m = leading ? std::clamp<Eigen::Index>(*leading, 1, n) : n;

    // Q = I - Q0 Q0' with Q0 an orthonormal basis of span(Delta).
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(design.delta);
    const Eigen::MatrixXd q0 = qr.householderQ() * Eigen::MatrixXd::Identity(n, 3);
    const Eigen::MatrixXd w = design.phi * q0;
    const Eigen::Matrix3d core = q0.transpose() * w;
    Eigen::MatrixXd qpq = design.phi;
    qpq.noalias() -= w * q0.transpose();
    qpq.noalias() -= q0 * w.transpose();
    qpq.noalias() += q0 * (core * q0.transpose());
    qpq = 0.5 * (qpq + qpq.transpose()).eval();

    QphiqEigen out;
    lapack_int info = 0;
    if (m == n) {
        Eigen::VectorXd values(n);
        info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', static_cast<lapack_int>(n), qpq.data(),
                              static_cast<lapack_int>(n), values.data());
        if (info != 0) throw Error(ErrorKind::EigenFailure, "dsyevd info=" + std::to_string(info));
        out.values = values.reverse();
        out.vectors = qpq.rowwise().reverse();
    } else {
        Eigen::VectorXd values(n);
        Eigen::MatrixXd vectors(n, m);
        std::vector<lapack_int> support(2 * static_cast<std::size_t>(m));
        lapack_int found = 0;
        info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', static_cast<lapack_int>(n), qpq.data(),
                              static_cast<lapack_int>(n), 0.0, 0.0, static_cast<lapack_int>(n - m + 1),
                              static_cast<lapack_int>(n), 0.0, &found, values.data(), vectors.data(),
                              static_cast<lapack_int>(n), support.data());
        if (info != 0 || found != m) {
            throw Error(ErrorKind::EigenFailure, "dsyevr info=" + std::to_string(info));
        }
        out.values = values.head(m).reverse();
        out.vectors = vectors.rowwise().reverse();
    }
    normalise_signs(out.vectors);
    return out;
}

TpsBasis TpsBasis::build(std::vector<Location> locations, std::optional<Eigen::Index> leading) {
    TpsDesign design = build_design(locations);
    QphiqEigen eig = eigen_qphiq(design, leading);

    TpsBasis basis;
    basis.locations_ = std::move(locations);
    const Eigen::Matrix3d gram = design.delta.transpose() * design.delta;
    basis.phi_delta_gram_inv_ = design.phi * design.delta * gram.inverse();
    basis.delta_ = std::move(design.delta);
    basis.phi_ = std::move(design.phi);
    basis.eigvals_ = std::move(eig.values);
    basis.eigvecs_ = std::move(eig.vectors);

    const double top = basis.eigvals_.size() > 0 ? basis.eigvals_(0) : 0.0;
    Eigen::Index usable = 0;
    if (top > 0.0) {
        while (usable < basis.eigvals_.size() && basis.eigvals_(usable) >= kEigenFloor * top) ++usable;
    }
    basis.max_rank_ = std::min<Eigen::Index>(3 + usable, basis.size());
    return basis;
}

void TpsBasis::check_rank(Eigen::Index K) const {
    if (K < 3 || K > size() || K - 3 > eigvals_.size()) {
        throw Error(ErrorKind::RankOutOfRange,
                    "K=" + std::to_string(K) + " outside [3, " + std::to_string(size()) + "]");
    }
    if (K > 3) {
        const double top = eigvals_(0);
        if (!(eigvals_(K - 4) >= kEigenFloor * top) || top <= 0.0) {
            throw Error(ErrorKind::NearZeroEigenvalue,
                        "eigenvalue " + std::to_string(K - 3) + " is numerically zero");
        }
    }
}

Eigen::MatrixXd TpsBasis::evaluate(Eigen::Index K, std::span<const Location> points) const {
    check_rank(K);
    const auto m = static_cast<Eigen::Index>(points.size());
    const Eigen::Index n = size();
    Eigen::MatrixXd psi(m, K);
    for (Eigen::Index i = 0; i < m; ++i) {
        psi(i, 0) = 1.0;
        psi(i, 1) = points[i].s1;
        psi(i, 2) = points[i].s2;
    }
    if (K == 3) return psi;

    // Rows: phi(s)' - delta(s)' (Phi Delta (Delta'Delta)^-1)'.
    Eigen::MatrixXd radial(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) radial(i, j) = radial_phi(points[i], locations_[j]);
    }
    radial.noalias() -= psi.leftCols(3) * phi_delta_gram_inv_.transpose();
    const Eigen::Index tail = K - 3;
    psi.rightCols(tail).noalias() = radial * eigvecs_.leftCols(tail);
    psi.rightCols(tail) *= eigvals_.head(tail).cwiseInverse().asDiagonal();
    return psi;
}

Eigen::MatrixXd TpsBasis::at_sites(Eigen::Index K) const {
    check_rank(K);
    Eigen::MatrixXd psi(size(), K);
    psi.leftCols(3) = delta_;
    psi.rightCols(K - 3) = eigvecs_.leftCols(K - 3);
    return psi;
}

Eigen::MatrixXd evaluate_basis(const TpsBasis& basis, Eigen::Index K, std::span<const Location> points) {
    return basis.evaluate(K, points);
}

Eigen::Index default_rank_bound(Eigen::Index n) {
    const auto bound = static_cast<Eigen::Index>(std::ceil(10.0 * std::sqrt(static_cast<double>(n))));
    return std::min(bound, n);
}

}  // namespace zinflate
