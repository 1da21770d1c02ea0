#pragma once

#include "zinflate/tps_basis.hpp"
#include "zinflate/zim_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace zinflate {

/// Largest distance in the unit square.
inline constexpr double kMaxDistance = std::numbers::sqrt2;
/// Range multiplier of the binary (structural-zero) field.
inline constexpr double kBinaryRangeFactor = 0.3;
/// Side of the regular grid the sites are drawn from.
inline constexpr std::int64_t kGridSide = 10000;

enum class ZeroInflation { P40, P70 };

/// Simulation design: unit square, five covariates (three N(0,1), two
/// Bernoulli(0.5)), Gaussian-copula binary and Poisson fields with exponential
/// correlation.
struct SimScenario {
    Eigen::Index n = 400;
    ZeroInflation zero_inflation = ZeroInflation::P40;
    double correlation_c = 0.3;
    double sill = 1.0;
    double nugget = 2.0;
    Eigen::VectorXd beta_true;   ///< empty: preset for zero_inflation
    Eigen::VectorXd gamma_true;
    std::uint64_t seed = 0;

    [[nodiscard]] double poisson_range() const { return correlation_c * kMaxDistance; }
    [[nodiscard]] double binary_range() const { return kBinaryRangeFactor * kMaxDistance; }
    /// Coefficients in effect (explicit ones, or the preset).
    [[nodiscard]] ThetaParams truth() const;
    void validate() const;
};

/// True coefficients of the 40% and 70% zero-inflation designs.
ThetaParams preset_truth(ZeroInflation level);

struct SimulatedData {
    SpatialDataset data;
    ThetaParams theta;
    Eigen::VectorXd phi;     ///< true occurrence probabilities
    Eigen::VectorXd lambda;  ///< true intensities
    std::vector<int> structural_zero;
};

/// Independent engine for one named stream of a seed.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint32_t stream);

/// n distinct points of the kGridSide x kGridSide grid on [0,1]^2.
std::vector<Location> sample_locations(Eigen::Index n, std::uint64_t seed);

/// Off-diagonal sill/(sill+nugget) exp(-h/range); unit diagonal.
Eigen::MatrixXd exp_correlation_matrix(std::span<const Location> locations, double sill, double nugget,
                                       double range);

/// One draw from N(0, corr) via Cholesky; retries once with 1e-10 diagonal
/// jitter, then throws FactorizationFailure.
Eigen::VectorXd gaussian_copula_field(const Eigen::MatrixXd& corr, std::uint64_t seed);

/// Standard normal CDF.
double normal_cdf(double x);

/// Smallest k with P(Poisson(mean) <= k) >= u; capped at mean + 20 sqrt(mean).
int poisson_quantile(double u, double mean);

SimulatedData generate_dataset(const SimScenario& sc);

}  // namespace zinflate
