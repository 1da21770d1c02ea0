#include "zinflate/cli/commands.hpp"

#include "zinflate/parallel.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>

namespace zinflate::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<std::string> parameter_names(const std::vector<std::string>& covariates,
                                         const std::vector<Eigen::Index>& v_mask,
                                         const std::vector<Eigen::Index>& u_mask) {
    const auto column = [&](Eigen::Index c) {
        return c == 0 ? std::string("intercept") : covariates[static_cast<std::size_t>(c - 1)];
    };
    std::vector<std::string> out;
    for (Eigen::Index c : v_mask) out.push_back("beta_" + column(c));
    for (Eigen::Index c : u_mask) out.push_back("gamma_" + column(c));
    return out;
}

std::string na_or(double v, bool defined) { return defined ? format_double(v) : "NA"; }

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    m.count = xs.size();
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return m;
}

std::vector<const ReplicateRecord*> successful(const ReplicateSummary& s) {
    std::vector<const ReplicateRecord*> out;
    for (const auto& r : s.records) {
        if (r.ok) out.push_back(&r);
    }
    return out;
}

SpatialDataset load_input(const RunConfig& cfg) {
    if (cfg.input_path.empty()) throw Error(ErrorKind::InvalidArgument, "--input is required");
    SpatialDataset ds = ingest_csv(cfg.input_path, cfg.ingest);
    ds.validate();
    cfg.fit.validate(ds.size());
    return ds;
}

std::optional<SpatialDataset> load_grid(const RunConfig& cfg) {
    if (!cfg.grid_covariates) return std::nullopt;
    IngestOptions opts;
    opts.require_y = false;
    return ingest_csv(*cfg.grid_covariates, opts);
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

std::string jackknife_csv(const std::vector<std::string>& names, const Eigen::VectorXd& theta,
                          const JackknifeResult& jk) {
    std::string out = "parameter,estimate,variance,se,lower,upper\n";
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        out += fmt::format("{},{},{},{},{},{}\n", names[j], format_double(theta(i)), format_double(jk.variances(i)),
                           format_double(std::sqrt(jk.variances(i))), format_double(jk.intervals[j].lower),
                           format_double(jk.intervals[j].upper));
    }
    return out;
}

std::string blocks_csv(const SpatialDataset& ds, const BlockAssignment& blocks) {
    std::string out = "s1,s2,block\n";
    for (std::size_t i = 0; i < ds.locations.size(); ++i) {
        out += fmt::format("{},{},{}\n", format_double(ds.locations[i].s1), format_double(ds.locations[i].s2),
                           blocks.labels[i]);
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    if (grid_resolution < 10 || grid_resolution > 1000) {
        throw Error(ErrorKind::InvalidArgument, "--grid must lie in [10, 1000]");
    }
    if (blocks_B < 3) throw Error(ErrorKind::InvalidArgument, "--blocks must be at least 3");
    if (reps < 1) throw Error(ErrorKind::InvalidArgument, "--reps must be at least 1");
    if (!(fit.epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "--epsilon must be positive");
    if (fit.max_outer_iters < 1) throw Error(ErrorKind::InvalidArgument, "--max-iters must be at least 1");
    if (scenario) scenario->validate();
}

int exit_code(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Usage: return 1;
        case ErrorCategory::Data: return 2;
        case ErrorCategory::Numerical: return 3;
    }
    return 3;
}

std::vector<std::string> parameter_names(const SpatialDataset& ds) {
    return parameter_names(ds.covariate_names, ds.v_mask, ds.u_mask);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_surfaces(const SpatialDataset& ds, const ThetaParams& theta,
                                                              const Eigen::MatrixXd& x) {
    const Eigen::Index m = x.rows();
    Eigen::VectorXd phi(m);
    Eigen::VectorXd lambda(m);
    Eigen::VectorXd v(static_cast<Eigen::Index>(ds.v_mask.size()));
    Eigen::VectorXd u(static_cast<Eigen::Index>(ds.u_mask.size()));
    for (Eigen::Index i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < ds.v_mask.size(); ++k) v(static_cast<Eigen::Index>(k)) = x(i, ds.v_mask[k]);
        for (std::size_t k = 0; k < ds.u_mask.size(); ++k) u(static_cast<Eigen::Index>(k)) = x(i, ds.u_mask[k]);
        phi(i) = link_phi(v, theta.beta);
        lambda(i) = link_lambda(u, theta.gamma);
    }
    return {phi, lambda};
}

std::string surfaces_csv(const SpatialDataset& ds, const FitResult& fit, const std::optional<SpatialDataset>& grid,
                         int resolution) {
    std::string out = "s1,s2,phi_hat,lambda_hat\n";
    if (!grid) {
        const auto [phi, lambda] = predict_surfaces(ds, fit.theta_hat, ds.x);
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            const auto& s = ds.locations[static_cast<std::size_t>(i)];
            out += fmt::format("{},{},{},{}\n", format_double(s.s1), format_double(s.s2), format_double(phi(i)),
                               format_double(lambda(i)));
        }
        return out;
    }

    // Columns of the grid file feeding each fitted covariate.
    std::vector<Eigen::Index> source(ds.covariate_names.size());
    for (std::size_t k = 0; k < ds.covariate_names.size(); ++k) {
        const auto it = std::find(grid->covariate_names.begin(), grid->covariate_names.end(), ds.covariate_names[k]);
        if (it == grid->covariate_names.end()) {
            throw Error(ErrorKind::MissingColumn,
                        fmt::format("covariate grid lacks column '{}'", ds.covariate_names[k]));
        }
        source[k] = static_cast<Eigen::Index>(it - grid->covariate_names.begin()) + 1;
    }

    double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1, lo2 = lo1, hi2 = -lo1;
    for (const auto& s : ds.locations) {
        lo1 = std::min(lo1, s.s1);
        hi1 = std::max(hi1, s.s1);
        lo2 = std::min(lo2, s.s2);
        hi2 = std::max(hi2, s.s2);
    }
    const auto res = static_cast<Eigen::Index>(resolution);
    Eigen::MatrixXd x(res * res, ds.x.cols());
    std::vector<Location> nodes;
    nodes.reserve(static_cast<std::size_t>(res * res));
    for (Eigen::Index a = 0; a < res; ++a) {
        for (Eigen::Index b = 0; b < res; ++b) {
            const Location node{lo1 + (hi1 - lo1) * static_cast<double>(b) / static_cast<double>(res - 1),
                                lo2 + (hi2 - lo2) * static_cast<double>(a) / static_cast<double>(res - 1)};
            std::size_t nearest = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t g = 0; g < grid->locations.size(); ++g) {
                const double d1 = grid->locations[g].s1 - node.s1;
                const double d2 = grid->locations[g].s2 - node.s2;
                const double d = d1 * d1 + d2 * d2;
                if (d < best) {
                    best = d;
                    nearest = g;
                }
            }
            const Eigen::Index row = static_cast<Eigen::Index>(nodes.size());
            x(row, 0) = 1.0;
            for (std::size_t k = 0; k < source.size(); ++k) {
                x(row, static_cast<Eigen::Index>(k) + 1) = grid->x(static_cast<Eigen::Index>(nearest), source[k]);
            }
            nodes.push_back(node);
        }
    }
    const auto [phi, lambda] = predict_surfaces(ds, fit.theta_hat, x);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out += fmt::format("{},{},{},{}\n", format_double(nodes[i].s1), format_double(nodes[i].s2),
                           format_double(phi(r)), format_double(lambda(r)));
    }
    return out;
}

std::string estimates_csv(const SpatialDataset& ds, const FitResult& fit) {
    const auto names = parameter_names(ds);
    const Eigen::VectorXd theta = fit.theta_hat.stacked();
    std::string out = "name,value\n";
    for (std::size_t j = 0; j < names.size(); ++j) {
        out += names[j] + ',' + format_double(theta(static_cast<Eigen::Index>(j))) + '\n';
    }
    out += fmt::format("K1,{}\nK2,{}\niterations,{}\nconverged,{}\n", fit.k1, fit.k2, fit.outer_iters,
                       fit.converged ? "true" : "false");
    return out;
}

std::string fit_json(const SpatialDataset& ds, const FitResult& fit, const FitConfig& cfg, const JackknifeResult* jk) {
    const auto names = parameter_names(ds);
    const Eigen::VectorXd theta = fit.theta_hat.stacked();
    nlohmann::ordered_json j;
    j["n"] = ds.size();
    j["config"] = {{"epsilon", cfg.epsilon},
                   {"max_outer_iters", cfg.max_outer_iters},
                   {"k_mode", cfg.k_selection == RankSelection::Aic ? "aic" : "fixed"},
                   {"k1", cfg.k1},
                   {"k2", cfg.k2},
                   {"seed", cfg.seed}};
    nlohmann::ordered_json est;
    for (std::size_t p = 0; p < names.size(); ++p) est[names[p]] = theta(static_cast<Eigen::Index>(p));
    j["estimates"] = est;
    j["K1"] = fit.k1;
    j["K2"] = fit.k2;
    j["iterations"] = fit.outer_iters;
    j["converged"] = fit.converged;
    j["final_score_norm"] = fit.final_score_norm;
    nlohmann::ordered_json trace = nlohmann::ordered_json::array();
    for (const auto& rec : fit.trace) {
        trace.push_back({{"iteration", rec.iteration},
                         {"theta", to_vector(rec.theta.stacked())},
                         {"K1", rec.k1},
                         {"K2", rec.k2},
                         {"change", rec.change},
                         {"score_norm", rec.score_norm},
                         {"halvings", rec.halvings}});
    }
    j["trace"] = trace;
    if (jk != nullptr) {
        j["jackknife"] = {{"used_blocks", jk->used_blocks},
                          {"failed_blocks", jk->failed_blocks},
                          {"nonconverged", jk->nonconverged},
                          {"variances", to_vector(jk->variances)}};
    }
    return j.dump(2) + '\n';
}

void run_fit(const RunConfig& cfg) {
    cfg.validate();
    const SpatialDataset ds = load_input(cfg);
    const auto grid = load_grid(cfg);
    const TpsBasis basis = build_basis_for(ds, cfg.fit);
    const FitResult result = fit(ds, basis, cfg.fit);
    spdlog::info("fit: n={} K1={} K2={} iterations={} converged={}", ds.size(), result.k1, result.k2,
                 result.outer_iters, result.converged);
    ensure_dir(cfg.output_dir);
    write_atomic(cfg.output_dir / "estimates.csv", estimates_csv(ds, result));
    write_atomic(cfg.output_dir / "surfaces.csv", surfaces_csv(ds, result, grid, cfg.grid_resolution));
    write_atomic(cfg.output_dir / "fit.json", fit_json(ds, result, cfg.fit));
}

void run_jackknife(const RunConfig& cfg) {
    cfg.validate();
    const SpatialDataset ds = load_input(cfg);
    const auto grid = load_grid(cfg);
    const TpsBasis basis = build_basis_for(ds, cfg.fit);
    const FitResult result = fit(ds, basis, cfg.fit);
    const BlockAssignment blocks = kmeans_blocks(ds.locations, cfg.blocks_B, cfg.fit.seed);
    const JackknifeResult jk = block_jackknife(ds, cfg.fit, blocks, result, cfg.threads);
    spdlog::info("jackknife: {} blocks used, {} failed, {} refits not converged", jk.used_blocks.size(),
                 jk.failed_blocks.size(), jk.nonconverged);
    ensure_dir(cfg.output_dir);
    write_atomic(cfg.output_dir / "estimates.csv", estimates_csv(ds, result));
    write_atomic(cfg.output_dir / "surfaces.csv", surfaces_csv(ds, result, grid, cfg.grid_resolution));
    write_atomic(cfg.output_dir / "jackknife.csv", jackknife_csv(parameter_names(ds), result.theta_hat.stacked(), jk));
    write_atomic(cfg.output_dir / "blocks.csv", blocks_csv(ds, blocks));
    write_atomic(cfg.output_dir / "fit.json", fit_json(ds, result, cfg.fit, &jk));
}

void run_simulate(const RunConfig& cfg) {
    cfg.validate();
    SimScenario sc = cfg.scenario.value_or(SimScenario{});
    const SimulatedData sim = generate_dataset(sc);
    spdlog::info("simulate: n={} zero fraction {:.3f}", sc.n, (sim.data.y.array() == 0.0).cast<double>().mean());
    ensure_dir(cfg.output_dir);
    write_atomic(cfg.output_dir / "dataset.csv", dataset_csv(sim.data));
    write_atomic(cfg.output_dir / "truth.json", truth_json(sim, sc));
}

std::uint64_t replicate_seed(std::uint64_t seed, int rep) {
    return make_stream(seed, 0x10000u + static_cast<std::uint32_t>(rep))();
}

ReplicateSummary run_replicates(const RunConfig& cfg, const std::atomic<bool>* stop) {
    cfg.validate();
    if (!cfg.scenario) throw Error(ErrorKind::InvalidArgument, "replicate needs a simulation scenario");
    const SimScenario base = *cfg.scenario;

    ReplicateSummary summary;
    summary.truth = base.truth();
    summary.names = parameter_names({"x1", "x2", "x3", "x4", "x5"}, all_columns(6), all_columns(6));

    const auto reps = static_cast<std::size_t>(cfg.reps);
    std::vector<std::optional<ReplicateRecord>> slots(reps);
    std::mutex log_mutex;
    std::size_t done = 0;

    parallel_for(
        reps, cfg.threads,
        [&](std::size_t r) {
            ReplicateRecord rec;
            rec.rep = static_cast<int>(r);
            rec.seed = replicate_seed(base.seed, rec.rep);
            try {
                SimScenario sc = base;
                sc.seed = rec.seed;
                auto t0 = Clock::now();
                const SimulatedData sim = generate_dataset(sc);
                rec.generate_seconds = seconds_since(t0);
                rec.zero_fraction = (sim.data.y.array() == 0.0).cast<double>().mean();

                t0 = Clock::now();
                const TpsBasis basis = build_basis_for(sim.data, cfg.fit);
                const FitResult result = fit(sim.data, basis, cfg.fit);
                rec.fit_seconds = seconds_since(t0);
                rec.theta_hat = result.theta_hat.stacked();
                rec.k1 = result.k1;
                rec.k2 = result.k2;
                rec.iterations = result.outer_iters;
                rec.converged = result.converged;

                if (cfg.jackknife) {
                    t0 = Clock::now();
                    const BlockAssignment blocks = kmeans_blocks(sim.data.locations, cfg.blocks_B, rec.seed);
                    rec.jackknife = block_jackknife(sim.data, cfg.fit, blocks, result, 1);
                    rec.jackknife_seconds = seconds_since(t0);
                }
                rec.ok = true;
            } catch (const Error& e) {
                rec.error = e.what();
            }
            std::lock_guard lock(log_mutex);
            ++done;
            if (rec.ok) {
                spdlog::info("replicate {} ({}/{}): K1={} K2={} iterations={} fit {:.2f}s", rec.rep, done, reps,
                             rec.k1, rec.k2, rec.iterations, rec.fit_seconds);
            } else {
                spdlog::warn("replicate {} failed: {}", rec.rep, rec.error);
            }
            slots[r] = std::move(rec);
        },
        stop);

    for (auto& slot : slots) {
        if (slot) {
            summary.records.push_back(std::move(*slot));
        } else {
            summary.interrupted = true;
        }
    }
    return summary;
}

std::string table_means_sd(const ReplicateSummary& s) {
    const auto ok = successful(s);
    const Eigen::VectorXd truth = s.truth.stacked();
    std::string out = "parameter,true,mean,sd,bj_mean,coverage\n";
    for (std::size_t j = 0; j < s.names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        std::vector<double> est, se;
        std::size_t covered = 0;
        for (const auto* r : ok) {
            est.push_back(r->theta_hat(i));
            if (r->jackknife) {
                se.push_back(std::sqrt(r->jackknife->variances(i)));
                if (r->jackknife->intervals[j].contains(truth(i))) ++covered;
            }
        }
        const Moments m = moments(est);
        const Moments b = moments(se);
        out += fmt::format("{},{},{},{},{},{}\n", s.names[j], format_double(truth(i)), na_or(m.mean, m.count > 0),
                           na_or(m.sd, m.count > 1), na_or(b.mean, b.count > 0),
                           na_or(static_cast<double>(covered) / static_cast<double>(std::max<std::size_t>(b.count, 1)),
                                 b.count > 0));
    }
    return out;
}

std::string table_basis_iters(const ReplicateSummary& s) {
    const auto ok = successful(s);
    std::vector<double> k1, k2, it, conv;
    for (const auto* r : ok) {
        k1.push_back(static_cast<double>(r->k1));
        k2.push_back(static_cast<double>(r->k2));
        it.push_back(static_cast<double>(r->iterations));
        conv.push_back(r->converged ? 1.0 : 0.0);
    }
    std::string out = "quantity,mean,sd\n";
    const auto row = [&](const char* name, const std::vector<double>& xs) {
        const Moments m = moments(xs);
        out += fmt::format("{},{},{}\n", name, na_or(m.mean, m.count > 0), na_or(m.sd, m.count > 1));
    };
    row("K1", k1);
    row("K2", k2);
    row("iterations", it);
    row("converged", conv);
    return out;
}

std::string table_timing(const ReplicateSummary& s) {
    const auto ok = successful(s);
    std::vector<double> gen, fit_s, jk, total;
    for (const auto* r : ok) {
        gen.push_back(r->generate_seconds);
        fit_s.push_back(r->fit_seconds);
        if (r->jackknife) jk.push_back(r->jackknife_seconds);
        total.push_back(r->generate_seconds + r->fit_seconds + r->jackknife_seconds);
    }
    std::string out = "stage,mean_seconds,sd_seconds,count\n";
    const auto row = [&](const char* name, const std::vector<double>& xs) {
        const Moments m = moments(xs);
        out += fmt::format("{},{},{},{}\n", name, na_or(m.mean, m.count > 0), na_or(m.sd, m.count > 1), m.count);
    };
    row("generate", gen);
    row("fit", fit_s);
    row("jackknife", jk);
    row("total", total);
    return out;
}

std::string table_mse(const ReplicateSummary& s) {
    const auto ok = successful(s);
    const Eigen::VectorXd truth = s.truth.stacked();
    std::string out = "parameter,bias,variance,mse\n";
    for (std::size_t j = 0; j < s.names.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(j);
        std::vector<double> est;
        double sq = 0.0;
        for (const auto* r : ok) {
            est.push_back(r->theta_hat(i));
            sq += (r->theta_hat(i) - truth(i)) * (r->theta_hat(i) - truth(i));
        }
        const Moments m = moments(est);
        out += fmt::format("{},{},{},{}\n", s.names[j], na_or(m.mean - truth(i), m.count > 0),
                           na_or(m.sd * m.sd, m.count > 1), na_or(sq / static_cast<double>(std::max<std::size_t>(m.count, 1)), m.count > 0));
    }
    return out;
}

std::string table_replicates(const ReplicateSummary& s) {
    std::string out = "rep,seed,status,zero_fraction,K1,K2,iterations,converged";
    for (const auto& name : s.names) out += ',' + name;
    out += ",generate_seconds,fit_seconds,jackknife_seconds,error\n";
    for (const auto& r : s.records) {
        out += fmt::format("{},{},{},{},{},{},{},{}", r.rep, r.seed, r.ok ? "ok" : "failed",
                           format_double(r.zero_fraction), r.k1, r.k2, r.iterations, r.converged ? "true" : "false");
        for (std::size_t j = 0; j < s.names.size(); ++j) {
            out += ',' + (r.ok ? format_double(r.theta_hat(static_cast<Eigen::Index>(j))) : std::string("NA"));
        }
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += fmt::format(",{},{},{},{}\n", format_double(r.generate_seconds), format_double(r.fit_seconds),
                           format_double(r.jackknife_seconds), err);
    }
    return out;
}

bool run_replicate(const RunConfig& cfg, const std::atomic<bool>* stop) {
    const ReplicateSummary s = run_replicates(cfg, stop);
    if (s.interrupted) spdlog::warn("interrupted: writing tables for {} completed replicates", s.records.size());
    ensure_dir(cfg.output_dir);
    write_atomic(cfg.output_dir / "table_means_sd.csv", table_means_sd(s));
    write_atomic(cfg.output_dir / "table_basis_iters.csv", table_basis_iters(s));
    write_atomic(cfg.output_dir / "timing.csv", table_timing(s));
    write_atomic(cfg.output_dir / "table_mse.csv", table_mse(s));
    write_atomic(cfg.output_dir / "replicates.csv", table_replicates(s));
    return !s.interrupted;
}

}  // namespace zinflate::cli
