#pragma once

#include "zinflate/cli/csv_io.hpp"
#include "zinflate/error.hpp"
#include "zinflate/gee_fit.hpp"
#include "zinflate/inference.hpp"
#include "zinflate/simgen.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace zinflate::cli {

enum class Subcommand { Fit, Jackknife, Simulate, Replicate };

struct RunConfig {
    Subcommand subcommand = Subcommand::Fit;
    std::filesystem::path input_path;
    std::filesystem::path output_dir = ".";
    FitConfig fit;
    IngestOptions ingest;
    std::optional<SimScenario> scenario;
    int blocks_B = 20;
    int grid_resolution = 100;
    /// Covariates for surface prediction (s1, s2 and the fitted covariate columns).
    std::optional<std::filesystem::path> grid_covariates;
    int reps = 200;
    unsigned threads = 0;  ///< 0: logical cores
    bool jackknife = true;

    /// Throws InvalidArgument on out-of-range settings.
    void validate() const;
};

/// Exit status for an error: 1 usage, 2 data, 3 numerical.
int exit_code(ErrorCategory category);

/// "beta_intercept", "beta_x1", ..., "gamma_intercept", ...
std::vector<std::string> parameter_names(const SpatialDataset& ds);

/// phi-hat and lambda-hat at the rows of `x` (leading ones column).
std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_surfaces(const SpatialDataset& ds, const ThetaParams& theta,
                                                              const Eigen::MatrixXd& x);

/// res x res grid over the bounding box of `sites`; each node takes the
/// covariates of the nearest row of `grid`.
std::string surfaces_csv(const SpatialDataset& ds, const FitResult& fit, const std::optional<SpatialDataset>& grid,
                         int resolution);
std::string estimates_csv(const SpatialDataset& ds, const FitResult& fit);
std::string fit_json(const SpatialDataset& ds, const FitResult& fit, const FitConfig& cfg,
                     const JackknifeResult* jk = nullptr);

void run_fit(const RunConfig& cfg);
void run_jackknife(const RunConfig& cfg);
void run_simulate(const RunConfig& cfg);

struct ReplicateRecord {
    int rep = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double zero_fraction = 0.0;
    Eigen::VectorXd theta_hat;
    Eigen::Index k1 = 0;
    Eigen::Index k2 = 0;
    int iterations = 0;
    bool converged = false;
    std::optional<JackknifeResult> jackknife;
    double generate_seconds = 0.0;
    double fit_seconds = 0.0;
    double jackknife_seconds = 0.0;
};

struct ReplicateSummary {
    ThetaParams truth;
    std::vector<std::string> names;
    std::vector<ReplicateRecord> records;  ///< completed replicates, in rep order
    bool interrupted = false;
};

/// Seed of replicate `rep` under base seed `seed`.
std::uint64_t replicate_seed(std::uint64_t seed, int rep);

/// generate -> fit -> (jackknife) for cfg.reps replicates of cfg.scenario,
/// parallel across replicates. Stops starting new replicates once `stop` is set.
ReplicateSummary run_replicates(const RunConfig& cfg, const std::atomic<bool>* stop = nullptr);

std::string table_means_sd(const ReplicateSummary& s);
std::string table_basis_iters(const ReplicateSummary& s);
std::string table_timing(const ReplicateSummary& s);
std::string table_mse(const ReplicateSummary& s);
std::string table_replicates(const ReplicateSummary& s);

/// Runs the replicates and writes the tables; returns false when interrupted.
bool run_replicate(const RunConfig& cfg, const std::atomic<bool>* stop = nullptr);

}  // namespace zinflate::cli
