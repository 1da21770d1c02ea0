#pragma once

#include "zinflate/tps_basis.hpp"
#include "zinflate/zim_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace test_support {

inline std::vector<zinflate::Location> random_locations(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<zinflate::Location> out(static_cast<std::size_t>(n));
    for (auto& s : out) s = {unif(rng), unif(rng)};
    return out;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

inline Eigen::MatrixXd random_psd(Eigen::Index k, std::mt19937_64& rng) {
    const Eigen::MatrixXd a = random_matrix(k, k, rng);
    return a * a.transpose() / static_cast<double>(k);
}

/// Dataset with intercept plus p standard-normal covariates and the given counts.
inline zinflate::SpatialDataset make_dataset(std::vector<zinflate::Location> locations, const Eigen::VectorXd& y,
                                             int p, std::mt19937_64& rng) {
    const auto n = static_cast<Eigen::Index>(locations.size());
    zinflate::SpatialDataset ds;
    ds.locations = std::move(locations);
    ds.y = y;
    ds.x.resize(n, p + 1);
    ds.x.col(0).setOnes();
    if (p > 0) ds.x.rightCols(p) = random_matrix(n, p, rng);
    ds.v_mask = zinflate::all_columns(p + 1);
    ds.u_mask = zinflate::all_columns(p + 1);
    for (int j = 1; j <= p; ++j) ds.covariate_names.push_back("x" + std::to_string(j));
    return ds;
}

/// Counts drawn from the zero-inflated Poisson model at theta, independently per site.
inline Eigen::VectorXd draw_counts(const zinflate::SpatialDataset& ds, const zinflate::ThetaParams& theta,
                                   std::mt19937_64& rng) {
    Eigen::VectorXd y(ds.size());
    const Eigen::MatrixXd v = ds.v_design();
    const Eigen::MatrixXd u = ds.u_design();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const double phi = zinflate::link_phi(v.row(i).transpose(), theta.beta);
        const double lambda = zinflate::link_lambda(u.row(i).transpose(), theta.gamma);
        std::poisson_distribution<int> pois(lambda);
        y(i) = unif(rng) < phi ? 0.0 : static_cast<double>(pois(rng));
    }
    return y;
}

}  // namespace test_support
