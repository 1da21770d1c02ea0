#pragma once

#include "zinflate/gee_fit.hpp"
#include "zinflate/tps_basis.hpp"
#include "zinflate/zim_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace zinflate {

struct BlockAssignment {
    std::vector<int> labels;        ///< block index in [0, B) per site
    std::vector<Location> centers;
    int B = 0;
    double within_ss = 0.0;         ///< within-cluster sum of squares
};

/// k-means (Lloyd) partition of the sites into B spatial blocks, best of
/// `restarts` seeded k-means++ starts. Throws TooManyBlocks when B > n / 5.
BlockAssignment kmeans_blocks(std::span<const Location> locations, int B, std::uint64_t seed, int restarts = 10);

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    [[nodiscard]] bool contains(double value) const { return lower <= value && value <= upper; }
};

struct JackknifeResult {
    Eigen::MatrixXd leave_out;     ///< one row per successful block refit
    std::vector<int> used_blocks;  ///< block index of each row of leave_out
    std::vector<int> failed_blocks;
    int nonconverged = 0;          ///< successful refits that hit max_outer_iters
    Eigen::VectorXd variances;
    std::vector<Interval> intervals;
};

/// ((B-1)/B) sum_b (theta_{-b} - mean)^2 per column of `leave_out` (B x dim).
Eigen::VectorXd jackknife_variance(const Eigen::MatrixXd& leave_out);

/// z multiplier of the approximate 95% intervals.
inline constexpr double kInterval95 = 1.96;

/// Leave-one-block-out refits (basis rebuilt on the retained sites, warm
/// started at the full-data estimate). Failed refits are dropped and B shrinks
/// accordingly; fewer than 3 successes throws InsufficientBlocks.
JackknifeResult block_jackknife(const SpatialDataset& ds, const FitConfig& cfg, const BlockAssignment& blocks,
                                const FitResult& full_fit, unsigned threads = 1);

/// Fraction of (interval, truth) pairs whose interval covers the truth.
double coverage_probability(std::span<const std::pair<Interval, double>> results);

}  // namespace zinflate
