#include "zinflate/inference.hpp"

#include "zinflate/error.hpp"
#include "zinflate/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>

namespace zinflate {

namespace {

constexpr int kMaxLloydIters = 100;

double sq_dist(const Location& a, const Location& b) {
    const double d1 = a.s1 - b.s1;
    const double d2 = a.s2 - b.s2;
    return d1 * d1 + d2 * d2;
}

struct Partition {
    std::vector<int> labels;
    std::vector<Location> centers;
    double within_ss = std::numeric_limits<double>::infinity();
};

std::vector<Location> kmeanspp_centers(std::span<const Location> pts, int B, std::mt19937_64& rng) {
    const std::size_t n = pts.size();
    std::vector<Location> centers;
    centers.reserve(static_cast<std::size_t>(B));
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    centers.push_back(pts[first(rng)]);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = sq_dist(pts[i], centers[0]);
    while (static_cast<int>(centers.size()) < B) {
        std::discrete_distribution<std::size_t> pick(dist.begin(), dist.end());
        const Location c = pts[pick(rng)];
        centers.push_back(c);
        for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], sq_dist(pts[i], c));
    }
    return centers;
}

Partition lloyd(std::span<const Location> pts, std::vector<Location> centers) {
    const std::size_t n = pts.size();
    const auto B = static_cast<int>(centers.size());
    Partition p;
    p.labels.assign(n, -1);
    for (int iter = 0; iter < kMaxLloydIters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(pts[i], centers[0]);
            for (int b = 1; b < B; ++b) {
                const double d = sq_dist(pts[i], centers[static_cast<std::size_t>(b)]);
                if (d < best_d) {
                    best_d = d;
                    best = b;
                }
            }
            if (p.labels[i] != best) {
                p.labels[i] = best;
                changed = true;
            }
        }

        std::vector<int> count(static_cast<std::size_t>(B), 0);
        std::vector<Location> sum(static_cast<std::size_t>(B));
        for (std::size_t i = 0; i < n; ++i) {
            const auto b = static_cast<std::size_t>(p.labels[i]);
            ++count[b];
            sum[b].s1 += pts[i].s1;
            sum[b].s2 += pts[i].s2;
        }
        for (int b = 0; b < B; ++b) {
            const auto bb = static_cast<std::size_t>(b);
            if (count[bb] > 0) {
                centers[bb] = {sum[bb].s1 / count[bb], sum[bb].s2 / count[bb]};
                continue;
            }
            // Empty cluster: move it onto the point farthest from its centre,
            // taken from a cluster that can spare one.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto li = static_cast<std::size_t>(p.labels[i]);
                if (count[li] < 2) continue;
                const double d = sq_dist(pts[i], centers[li]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far < n) {
                --count[static_cast<std::size_t>(p.labels[far])];
                p.labels[far] = b;
                count[bb] = 1;
                centers[bb] = pts[far];
                changed = true;
            }
        }
        if (!changed) break;
    }
    p.centers = std::move(centers);
    p.within_ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p.within_ss += sq_dist(pts[i], p.centers[static_cast<std::size_t>(p.labels[i])]);
    }
    return p;
}

}  // namespace

BlockAssignment kmeans_blocks(std::span<const Location> locations, int B, std::uint64_t seed, int restarts) {
    const auto n = static_cast<long long>(locations.size());
    if (B < 1) throw Error(ErrorKind::InvalidArgument, "B must be at least 1");
    if (static_cast<long long>(B) * 5 > n) {
        throw Error(ErrorKind::TooManyBlocks,
                    std::to_string(B) + " blocks for " + std::to_string(n) + " sites (need B <= n/5)");
    }
    std::mt19937_64 rng(seed);
    Partition best;
    for (int r = 0; r < std::max(restarts, 1); ++r) {
        Partition p = lloyd(locations, kmeanspp_centers(locations, B, rng));
        if (p.within_ss < best.within_ss) best = std::move(p);
    }
    return {std::move(best.labels), std::move(best.centers), B, best.within_ss};
}

Eigen::VectorXd jackknife_variance(const Eigen::MatrixXd& leave_out) {
    const Eigen::Index B = leave_out.rows();
    if (B < 1) throw Error(ErrorKind::EmptyInput, "no leave-out estimates");
    const Eigen::RowVectorXd mean = leave_out.colwise().mean();
    const Eigen::MatrixXd centered = leave_out.rowwise() - mean;
    const double scale = static_cast<double>(B - 1) / static_cast<double>(B);
    return scale * centered.colwise().squaredNorm().transpose();
}

JackknifeResult block_jackknife(const SpatialDataset& ds, const FitConfig& cfg, const BlockAssignment& blocks,
                                const FitResult& full_fit, unsigned threads) {
    const Eigen::Index n = ds.size();
    if (static_cast<Eigen::Index>(blocks.labels.size()) != n) {
        throw Error(ErrorKind::DimensionMismatch, "block labels do not cover the dataset");
    }
    const std::size_t B = static_cast<std::size_t>(blocks.B);
    const Eigen::Index dim = full_fit.theta_hat.size();

    std::vector<std::optional<FitResult>> refits(B);
    parallel_for(B, threads, [&](std::size_t b) {
        std::vector<Eigen::Index> keep;
        keep.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            if (blocks.labels[static_cast<std::size_t>(i)] != static_cast<int>(b)) keep.push_back(i);
        }
        try {
            const SpatialDataset part = ds.subset(keep);
            const TpsBasis basis = build_basis_for(part, cfg);
            refits[b] = fit(part, basis, cfg, full_fit.theta_hat);
        } catch (const Error& e) {
            spdlog::warn("jackknife refit without block {} failed: {}", b, e.what());
        }
    });

    JackknifeResult out;
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t b = 0; b < B; ++b) {
        if (!refits[b]) {
            out.failed_blocks.push_back(static_cast<int>(b));
            continue;
        }
        if (!refits[b]->converged) ++out.nonconverged;
        out.used_blocks.push_back(static_cast<int>(b));
        rows.push_back(refits[b]->theta_hat.stacked());
    }
    if (rows.size() < 3) {
        throw Error(ErrorKind::InsufficientBlocks,
                    "only " + std::to_string(rows.size()) + " leave-out refits succeeded");
    }
    out.leave_out.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) out.leave_out.row(static_cast<Eigen::Index>(r)) = rows[r];
    out.variances = jackknife_variance(out.leave_out);

    const Eigen::VectorXd center = full_fit.theta_hat.stacked();
    out.intervals.reserve(static_cast<std::size_t>(dim));
    for (Eigen::Index j = 0; j < dim; ++j) {
        const double half = kInterval95 * std::sqrt(out.variances(j));
        out.intervals.push_back({center(j) - half, center(j) + half});
    }
    return out;
}

double coverage_probability(std::span<const std::pair<Interval, double>> results) {
    if (results.empty()) throw Error(ErrorKind::EmptyInput, "no intervals to score");
    std::size_t hits = 0;
    for (const auto& [interval, truth] : results) {
        if (interval.contains(truth)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

}  // namespace zinflate
