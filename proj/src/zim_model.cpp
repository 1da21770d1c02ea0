#include "zinflate/zim_model.hpp"

#include "zinflate/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace zinflate {

namespace {

// Below this the truncated-Poisson ratios are evaluated by their Taylor series.
constexpr double kSmallLambda = 1e-6;
// The slope numerator cancels to lambda^2 / 2, so its series takes over earlier.
constexpr double kSmallLambdaSlope = 1e-3;

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
    return out;
}

}  // namespace

Eigen::VectorXd ThetaParams::stacked() const {
    Eigen::VectorXd out(size());
    out << beta, gamma;
    return out;
}

ThetaParams ThetaParams::unstack(const Eigen::VectorXd& theta, Eigen::Index beta_size) {
    return {theta.head(beta_size), theta.tail(theta.size() - beta_size)};
}

Eigen::MatrixXd SpatialDataset::v_design() const { return select_columns(x, v_mask); }
Eigen::MatrixXd SpatialDataset::u_design() const { return select_columns(x, u_mask); }

SpatialDataset SpatialDataset::subset(const std::vector<Eigen::Index>& rows) const {
    SpatialDataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.locations.reserve(rows.size());
    out.y.resize(m);
    out.x.resize(m, x.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index r = rows[static_cast<std::size_t>(i)];
        out.locations.push_back(locations[static_cast<std::size_t>(r)]);
        out.y(i) = y(r);
        out.x.row(i) = x.row(r);
    }
    out.v_mask = v_mask;
    out.u_mask = u_mask;
    out.covariate_names = covariate_names;
    return out;
}

void SpatialDataset::validate() const {
    const Eigen::Index n = size();
    if (static_cast<Eigen::Index>(locations.size()) != n || x.rows() != n) {
        throw Error(ErrorKind::DimensionMismatch, "locations, y and x disagree on n");
    }
    if (x.cols() < 1) throw Error(ErrorKind::DimensionMismatch, "design has no intercept column");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y(i))) throw Error(ErrorKind::NonFiniteValue, "y at row " + std::to_string(i));
        if (y(i) < 0.0 || y(i) != std::floor(y(i))) {
            throw Error(ErrorKind::NonIntegerCount, "y at row " + std::to_string(i) + " is not a count");
        }
        if (x(i, 0) != 1.0) throw Error(ErrorKind::InvalidArgument, "x column 0 must be all ones");
        if (!x.row(i).allFinite()) throw Error(ErrorKind::NonFiniteValue, "x at row " + std::to_string(i));
    }
    for (const auto* mask : {&v_mask, &u_mask}) {
        if (mask->empty() || mask->front() != 0) {
            throw Error(ErrorKind::InvalidArgument, "covariate masks must start with the intercept column");
        }
        for (Eigen::Index c : *mask) {
            if (c < 0 || c >= x.cols()) throw Error(ErrorKind::InvalidArgument, "mask column out of range");
        }
    }
}

std::vector<Eigen::Index> all_columns(Eigen::Index cols) {
    std::vector<Eigen::Index> out(static_cast<std::size_t>(cols));
    for (Eigen::Index j = 0; j < cols; ++j) out[static_cast<std::size_t>(j)] = j;
    return out;
}

Eigen::VectorXd ModelState::stacked_z() const {
    Eigen::VectorXd out(z1.size() + z2.size());
    out << z1, z2;
    return out;
}

double logistic_clamped(double eta) {
    eta = std::clamp(eta, -kLinearPredictorClamp, kLinearPredictorClamp);
    return 1.0 / (1.0 + std::exp(-eta));
}

double exp_clamped(double eta) {
    return std::exp(std::clamp(eta, -kLinearPredictorClamp, kLinearPredictorClamp));
}

double link_phi(const Eigen::Ref<const Eigen::VectorXd>& v_row, const Eigen::Ref<const Eigen::VectorXd>& beta) {
    if (v_row.size() != beta.size()) throw Error(ErrorKind::DimensionMismatch, "v and beta lengths differ");
    return logistic_clamped(v_row.dot(beta));
}

double link_lambda(const Eigen::Ref<const Eigen::VectorXd>& u_row, const Eigen::Ref<const Eigen::VectorXd>& gamma) {
    if (u_row.size() != gamma.size()) throw Error(ErrorKind::DimensionMismatch, "u and gamma lengths differ");
    return exp_clamped(u_row.dot(gamma));
}

double truncated_mean(double lambda) {
    if (lambda < kSmallLambda) return 1.0 + lambda / 2.0 + lambda * lambda / 12.0;
    return lambda / -std::expm1(-lambda);
}

double truncated_mean_slope(double lambda) {
    if (lambda < kSmallLambdaSlope) return 0.5 + lambda / 6.0 - lambda * lambda * lambda / 180.0;
    const double q = -std::expm1(-lambda);
    return (1.0 - (1.0 + lambda) * std::exp(-lambda)) / (q * q);
}

double truncated_variance(double lambda) {
    if (lambda < kSmallLambda) return lambda / 2.0 + lambda * lambda / 6.0;
    const double g = truncated_mean(lambda);
    return std::max(g * (1.0 + lambda) - g * g, 0.0);
}

ModelState residuals(const SpatialDataset& ds, const ThetaParams& theta) {
    const Eigen::Index n = ds.size();
    const Eigen::VectorXd eta_v = ds.v_design() * theta.beta;
    const Eigen::VectorXd eta_u = ds.u_design() * theta.gamma;

    ModelState st;
    st.phi.resize(n);
    st.lambda.resize(n);
    st.z1.resize(n);
    st.z2.resize(n);
    st.var_z1.resize(n);
    st.var_z2.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double phi = logistic_clamped(eta_v(i));
        const double lam = exp_clamped(eta_u(i));
        const double e = std::exp(-lam);
        const double p_zero = phi + (1.0 - phi) * e;
        const double p_pos = (1.0 - phi) * -std::expm1(-lam);
        const bool positive = ds.y(i) > 0.0;
        st.phi(i) = phi;
        st.lambda(i) = lam;
        st.z1(i) = (positive ? 0.0 : 1.0) - p_zero;
        st.z2(i) = positive ? ds.y(i) - truncated_mean(lam) : 0.0;
        st.var_z1(i) = p_zero * p_pos;
        st.var_z2(i) = p_pos * truncated_variance(lam);
    }
    return st;
}

Eigen::MatrixXd derivative_matrix(const SpatialDataset& ds, const ThetaParams& theta) {
    const Eigen::Index n = ds.size();
    const Eigen::MatrixXd v = ds.v_design();
    const Eigen::MatrixXd u = ds.u_design();
    const Eigen::Index qb = theta.beta.size();
    const Eigen::Index qg = theta.gamma.size();
    if (v.cols() != qb || u.cols() != qg) {
        throw Error(ErrorKind::DimensionMismatch, "coefficient lengths differ from covariate masks");
    }
    const Eigen::VectorXd eta_v = v * theta.beta;
    const Eigen::VectorXd eta_u = u * theta.gamma;

    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2 * n, qb + qg);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double phi = logistic_clamped(eta_v(i));
        const double lam = exp_clamped(eta_u(i));
        const double e = std::exp(-lam);
        const double one_minus_e = -std::expm1(-lam);
        d.row(i).head(qb) = -one_minus_e * phi * (1.0 - phi) * v.row(i);
        d.row(i).tail(qg) = (1.0 - phi) * lam * e * u.row(i);
        if (ds.y(i) > 0.0) {
            d.row(n + i).tail(qg) = -lam * truncated_mean_slope(lam) * u.row(i);
        }
    }
    return d;
}

}  // namespace zinflate
