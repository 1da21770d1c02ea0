#include "zinflate/cli/csv_io.hpp"

#include "zinflate/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <system_error>

namespace zinflate::cli {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                 : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_number(const std::string& field, std::size_t line_no, const std::string& column) {
    double v = 0.0;
    std::string_view s = field;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::NonFiniteValue,
                    fmt::format("line {}: column '{}' value '{}' is not a finite number", line_no, column, field));
    }
    return v;
}

std::vector<Eigen::Index> resolve_mask(const std::optional<std::vector<std::string>>& names,
                                       const std::vector<std::string>& covariates, const char* flag) {
    if (!names) return all_columns(static_cast<Eigen::Index>(covariates.size()) + 1);
    std::vector<Eigen::Index> mask{0};
    for (const auto& name : *names) {
        const auto it = std::find(covariates.begin(), covariates.end(), name);
        if (it == covariates.end()) {
            throw Error(ErrorKind::MissingColumn, fmt::format("{} names unknown covariate '{}'", flag, name));
        }
        const auto col = static_cast<Eigen::Index>(it - covariates.begin()) + 1;
        if (std::find(mask.begin(), mask.end(), col) == mask.end()) mask.push_back(col);
    }
    std::sort(mask.begin(), mask.end());
    return mask;
}

}  // namespace

std::optional<std::vector<std::string>> parse_name_list(const std::string& text) {
    const std::string_view t = trim(text);
    if (t.empty() || t == "all") return std::nullopt;
    if (t == "none") return std::vector<std::string>{};
    std::vector<std::string> out;
    for (auto& f : split_fields(t)) {
        if (!f.empty()) out.push_back(std::move(f));
    }
    return out;
}

SpatialDataset parse_csv(std::istream& in, const IngestOptions& opts) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_fields(line);
            break;
        }
    }
    if (header.empty()) throw Error(ErrorKind::EmptyInput, "CSV has no header row");

    const auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i].empty()) throw Error(ErrorKind::MissingColumn, fmt::format("header column {} is unnamed", i + 1));
        if (std::find(header.begin() + static_cast<std::ptrdiff_t>(i) + 1, header.end(), header[i]) != header.end()) {
            throw Error(ErrorKind::MissingColumn, fmt::format("header repeats column '{}'", header[i]));
        }
    }
    const auto c_s1 = find_col("s1");
    const auto c_s2 = find_col("s2");
    const auto c_y = find_col("y");
    if (!c_s1) throw Error(ErrorKind::MissingColumn, "required column 's1' not found");
    if (!c_s2) throw Error(ErrorKind::MissingColumn, "required column 's2' not found");
    if (!c_y && opts.require_y) throw Error(ErrorKind::MissingColumn, "required column 'y' not found");

    std::vector<std::size_t> cov_cols;
    SpatialDataset ds;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i == *c_s1 || i == *c_s2 || (c_y && i == *c_y)) continue;
        cov_cols.push_back(i);
        ds.covariate_names.push_back(header[i]);
    }

    std::vector<double> ys;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::MissingColumn, fmt::format("line {}: expected {} fields, found {}", line_no,
                                                              header.size(), fields.size()));
        }
        ds.locations.push_back({parse_number(fields[*c_s1], line_no, "s1"), parse_number(fields[*c_s2], line_no, "s2")});
        if (c_y) {
            const double y = parse_number(fields[*c_y], line_no, "y");
            if (y < 0.0 || y != std::floor(y)) {
                throw Error(ErrorKind::NonIntegerCount,
                            fmt::format("line {}: y = {} is not a non-negative integer count", line_no, fields[*c_y]));
            }
            ys.push_back(y);
        }
        std::vector<double> row;
        row.reserve(cov_cols.size());
        for (std::size_t k = 0; k < cov_cols.size(); ++k) {
            row.push_back(parse_number(fields[cov_cols[k]], line_no, ds.covariate_names[k]));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(ErrorKind::EmptyInput, "CSV has no data rows");

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(cov_cols.size());
    ds.y = c_y ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(ys.data(), n)) : Eigen::VectorXd::Zero(n);
    ds.x.resize(n, p + 1);
    ds.x.col(0).setOnes();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            ds.x(i, j + 1) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }

    if (opts.standardize) {
        if (n < 2) throw Error(ErrorKind::ZeroVariance, "standardizing needs at least two rows");
        for (Eigen::Index j = 1; j <= p; ++j) {
            const double mean = ds.x.col(j).mean();
            const double sd = std::sqrt((ds.x.col(j).array() - mean).square().sum() / static_cast<double>(n - 1));
            if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
                throw Error(ErrorKind::ZeroVariance,
                            fmt::format("covariate '{}' is constant and cannot be standardized",
                                        ds.covariate_names[static_cast<std::size_t>(j - 1)]));
            }
            ds.x.col(j) = (ds.x.col(j).array() - mean) / sd;
        }
    }

    ds.v_mask = resolve_mask(opts.phi_covars, ds.covariate_names, "--phi-covars");
    ds.u_mask = resolve_mask(opts.lambda_covars, ds.covariate_names, "--lambda-covars");
    return ds;
}

SpatialDataset ingest_csv(const std::filesystem::path& path, const IngestOptions& opts) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open '{}'", path.string()));
    return parse_csv(in, opts);
}

std::string format_double(double v) { return fmt::format("{}", v); }

std::string dataset_csv(const SpatialDataset& ds) {
    std::string out = "s1,s2,y";
    for (const auto& name : ds.covariate_names) out += "," + name;
    out += '\n';
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const auto& s = ds.locations[static_cast<std::size_t>(i)];
        out += format_double(s.s1) + ',' + format_double(s.s2) + ',' + format_double(ds.y(i));
        for (Eigen::Index j = 1; j < ds.x.cols(); ++j) out += ',' + format_double(ds.x(i, j));
        out += '\n';
    }
    return out;
}

std::string truth_json(const SimulatedData& sim, const SimScenario& sc) {
    const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::ordered_json j;
    j["n"] = sc.n;
    j["zero_inflation"] = sc.zero_inflation == ZeroInflation::P40 ? 40 : 70;
    j["correlation_c"] = sc.correlation_c;
    j["sill"] = sc.sill;
    j["nugget"] = sc.nugget;
    j["seed"] = sc.seed;
    j["binary_range"] = sc.binary_range();
    j["poisson_range"] = sc.poisson_range();
    j["beta"] = vec(sim.theta.beta);
    j["gamma"] = vec(sim.theta.gamma);
    j["phi"] = vec(sim.phi);
    j["lambda"] = vec(sim.lambda);
    j["structural_zero"] = sim.structural_zero;
    j["zero_fraction"] = (sim.data.y.array() == 0.0).cast<double>().mean();
    return j.dump(2) + '\n';
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write '{}'", tmp.string()));
        out << content;
        out.flush();
        if (!out) throw Error(ErrorKind::Io, fmt::format("write to '{}' failed", tmp.string()));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::Io, fmt::format("cannot move '{}' into place: {}", tmp.string(), ec.message()));
}

}  // namespace zinflate::cli
