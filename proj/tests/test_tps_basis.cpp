#include "zinflate/error.hpp"
#include "zinflate/tps_basis.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace zinflate;

namespace {

std::vector<Location> unit_square_corners() { return {{0, 0}, {1, 0}, {0, 1}, {1, 1}}; }

// Second derivatives (xx, xy, yy) of r^2 log(r) / (8 pi) at offset (x, y).
Eigen::Vector3d kernel_hessian(double x, double y) {
    const double r2 = x * x + y * y;
    const double c = 1.0 / (8.0 * std::numbers::pi);
    const double base = std::log(r2) + 1.0;
    return {c * (base + 2.0 * x * x / r2), c * (2.0 * x * y / r2), c * (base + 2.0 * y * y / r2)};
}

}  // namespace

TEST_CASE("radial_phi closed form") {
    CHECK(radial_phi({0, 0}, {0, 0}) == 0.0);
    CHECK(radial_phi({1, 0}, {0, 0}) == 0.0);
    CHECK(radial_phi({2, 0}, {0, 0}) == doctest::Approx(0.110318).epsilon(1e-5));
    CHECK(radial_phi({2, 0}, {0, 0}) == doctest::Approx(4.0 * std::log(2.0) / (8.0 * std::numbers::pi)));
}

TEST_CASE("radial_phi is symmetric and rotation invariant") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (int t = 0; t < 10; ++t) {
        const Location a{unif(rng), unif(rng)};
        const Location b{unif(rng), unif(rng)};
        const double th = angle(rng);
        const auto rot = [&](const Location& p) {
            return Location{std::cos(th) * p.s1 - std::sin(th) * p.s2, std::sin(th) * p.s1 + std::cos(th) * p.s2};
        };
        const double v = radial_phi(a, b);
        CHECK(radial_phi(b, a) == doctest::Approx(v).epsilon(1e-12));
        CHECK(std::abs(radial_phi(rot(a), rot(b)) - v) < 1e-12);
    }
}

TEST_CASE("build_design on the unit square corners") {
    const auto pts = unit_square_corners();
    const TpsDesign d = build_design(pts);
    Eigen::MatrixXd expected(4, 3);
    expected << 1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 1, 1;
    CHECK(d.delta.isApprox(expected));
    CHECK(d.phi.diagonal().isZero(0.0));
    CHECK(d.phi.isApprox(d.phi.transpose()));
}

TEST_CASE("build_design rejects collinear and duplicate sites") {
    const std::vector<Location> line{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    CHECK_THROWS_WITH_AS(build_design(line), doctest::Contains("RankDeficientDelta"), Error);
    const std::vector<Location> dup{{0, 0}, {1, 0}, {0, 1}, {0, 0}};
    try {
        build_design(dup);
        FAIL("expected DuplicateLocations");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DuplicateLocations);
    }
    const std::vector<Location> three{{0, 0}, {1, 0}, {0, 1}};
    CHECK_THROWS_AS(build_design(three), Error);
}

TEST_CASE("eigen_qphiq on the corners has three null eigenvalues") {
    const auto pts = unit_square_corners();
    const QphiqEigen e = eigen_qphiq(build_design(pts));
    int zeros = 0;
    for (Eigen::Index i = 0; i < e.values.size(); ++i) zeros += std::abs(e.values(i)) < 1e-10 ? 1 : 0;
    CHECK(zeros >= 3);
}

TEST_CASE("eigen_qphiq reconstructs Q Phi Q and matches a dense solver") {
    std::mt19937_64 rng(3);
    const auto pts = test_support::random_locations(50, rng);
    const TpsDesign d = build_design(pts);
    const QphiqEigen e = eigen_qphiq(d);

    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(50, 50) -
                              d.delta * (d.delta.transpose() * d.delta).inverse() * d.delta.transpose();
    const Eigen::MatrixXd qpq = q * d.phi * q;
    const Eigen::MatrixXd recon = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    CHECK((recon - qpq).norm() < 1e-8 * qpq.norm());

    CHECK(e.values(0) > 0.0);
    for (Eigen::Index i = 1; i < e.values.size(); ++i) CHECK(e.values(i) <= e.values(i - 1));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(qpq);
    const Eigen::VectorXd ref = oracle.eigenvalues().reverse();
    for (Eigen::Index i = 0; i < e.values.size(); ++i) {
        CHECK(std::abs(e.values(i) - ref(i)) < 1e-10 * std::abs(ref(0)));
    }
}

TEST_CASE("truncated eigenpairs agree with the full decomposition") {
    std::mt19937_64 rng(4);
    const auto pts = test_support::random_locations(60, rng);
    const TpsDesign d = build_design(pts);
    const QphiqEigen full = eigen_qphiq(d);
    const QphiqEigen part = eigen_qphiq(d, 10);
    REQUIRE(part.values.size() == 10);
    for (Eigen::Index k = 0; k < 10; ++k) {
        CHECK(std::abs(part.values(k) - full.values(k)) < 1e-10 * full.values(0));
        CHECK((part.vectors.col(k) - full.vectors.col(k)).norm() < 1e-7);
    }
}

TEST_CASE("evaluate_basis examples") {
    std::mt19937_64 rng(5);
    const auto pts = test_support::random_locations(30, rng);
    const TpsBasis basis = TpsBasis::build(pts);

    const auto probe = test_support::random_locations(7, rng);
    const Eigen::MatrixXd psi3 = evaluate_basis(basis, 3, probe);
    for (Eigen::Index i = 0; i < 7; ++i) {
        CHECK(psi3(i, 0) == 1.0);
        CHECK(psi3(i, 1) == probe[static_cast<std::size_t>(i)].s1);
        CHECK(psi3(i, 2) == probe[static_cast<std::size_t>(i)].s2);
    }

    const Eigen::MatrixXd psi4 = evaluate_basis(basis, 4, pts);
    CHECK((psi4.col(3) - basis.eigvecs().col(0)).cwiseAbs().maxCoeff() < 1e-8);

    CHECK_THROWS_WITH_AS(evaluate_basis(basis, 31, pts), doctest::Contains("RankOutOfRange"), Error);
    CHECK_THROWS_AS(evaluate_basis(basis, 2, pts), Error);
}

TEST_CASE("basis at the sites is orthonormal and orthogonal to the affine part") {
    std::mt19937_64 rng(6);
    const auto pts = test_support::random_locations(80, rng);
    const TpsBasis basis = TpsBasis::build(pts);
    const Eigen::Index K = 25;
    const Eigen::MatrixXd psi = basis.evaluate(K, pts);
    const Eigen::MatrixXd radial = psi.rightCols(K - 3);
    CHECK((basis.delta().transpose() * radial).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((radial.transpose() * radial - Eigen::MatrixXd::Identity(K - 3, K - 3)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((basis.at_sites(K) - psi).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("evaluate_basis is bitwise deterministic") {
    std::mt19937_64 rng(7);
    const auto pts = test_support::random_locations(40, rng);
    const auto probe = test_support::random_locations(12, rng);
    const Eigen::MatrixXd a = TpsBasis::build(pts).evaluate(15, probe);
    const Eigen::MatrixXd b = TpsBasis::build(pts).evaluate(15, probe);
    CHECK(a == b);
}

TEST_CASE("near-zero eigenvalues cap the usable rank") {
    auto pts = unit_square_corners();
    pts.push_back({1e-7, 0.0});
    const TpsBasis basis = TpsBasis::build(pts);
    CHECK(basis.max_rank() == 4);
    CHECK_NOTHROW((void)basis.evaluate(4, pts));
    CHECK_THROWS_WITH_AS((void)basis.evaluate(5, pts), doctest::Contains("NearZeroEigenvalue"), Error);
}

TEST_CASE("default_rank_bound") {
    CHECK(default_rank_bound(400) == 200);
    CHECK(default_rank_bound(50) == 50);
    CHECK(default_rank_bound(3000) == 548);
}

TEST_CASE("penalty of a kernel combination matches quadrature of its roughness") {
    // nu is orthogonal to {1, s1, s2} on the corners, so the bending energy
    // of sum_i nu_i phi(., s_i) equals nu' Phi nu.
    const auto pts = unit_square_corners();
    const Eigen::Vector4d nu(1.0, -1.0, -1.0, 1.0);
    const TpsDesign d = build_design(pts);
    CHECK((d.delta.transpose() * nu).norm() < 1e-14);
    const double exact = nu.dot(d.phi * nu);

    const double lo = -14.5;
    const double hi = 15.5;
    const double h = 0.0125;
    const auto steps = static_cast<int>(std::lround((hi - lo) / h));
    double energy = 0.0;
    for (int a = 0; a < steps; ++a) {
        const double x = lo + (a + 0.5) * h;
        for (int b = 0; b < steps; ++b) {
            const double y = lo + (b + 0.5) * h;
            Eigen::Vector3d hess = Eigen::Vector3d::Zero();
            for (int i = 0; i < 4; ++i) hess += nu(i) * kernel_hessian(x - pts[i].s1, y - pts[i].s2);
            energy += hess(0) * hess(0) + 2.0 * hess(1) * hess(1) + hess(2) * hess(2);
        }
    }
    energy *= h * h;
    CHECK(energy == doctest::Approx(exact).epsilon(0.05));
}
