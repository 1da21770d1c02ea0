#include "zinflate/cli/commands.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

void configure_logging() {
    const char* level = std::getenv("ZINFLATE_LOG");
    spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
    spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace zinflate;
    using namespace zinflate::cli;
    configure_logging();

    CLI::App app{"Spatial zero-inflated count regression by GEE with a low-rank spline covariance"};
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig cfg;
    std::string input, out = ".", k_mode = "aic", phi_covars = "all", lambda_covars = "all", grid_covariates;
    int zero_inflation = 40;
    bool no_jackknife = false;
    SimScenario scenario;

    app.add_option("--input", input, "Input CSV with columns s1,s2,y and covariates");
    app.add_option("--out", out, "Output directory")->capture_default_str();
    app.add_option("--epsilon", cfg.fit.epsilon, "Convergence threshold on sum |delta theta|")->capture_default_str();
    app.add_option("--k-mode", k_mode, "Basis rank selection")->check(CLI::IsMember({"aic", "fixed"}))->capture_default_str();
    app.add_option("--k1", cfg.fit.k1, "Fixed rank of the Z1 covariance")->capture_default_str();
    app.add_option("--k2", cfg.fit.k2, "Fixed rank of the Z2 covariance")->capture_default_str();
    app.add_option("--max-iters", cfg.fit.max_outer_iters, "Maximum outer iterations")->capture_default_str();
    app.add_option("--blocks", cfg.blocks_B, "Jackknife blocks")->capture_default_str();
    app.add_option("--reps", cfg.reps, "Simulation replicates")->capture_default_str();
    app.add_option("--seed", cfg.fit.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", cfg.threads, "Worker threads (0: logical cores)")->capture_default_str();
    app.add_flag("--standardize", cfg.ingest.standardize, "Standardize covariates before fitting");
    app.add_option("--phi-covars", phi_covars, "Covariates of the phi model (comma list, all, none)")->capture_default_str();
    app.add_option("--lambda-covars", lambda_covars, "Covariates of the lambda model (comma list, all, none)")->capture_default_str();
    app.add_option("--grid", cfg.grid_resolution, "Surface grid resolution")->capture_default_str();
    app.add_option("--grid-covariates", grid_covariates, "CSV of covariates for surface prediction");
    app.add_option("--n", scenario.n, "Simulated sites")->capture_default_str();
    app.add_option("--zero-inflation", zero_inflation, "Simulated zero proportion")->check(CLI::IsMember({40, 70}))->capture_default_str();
    app.add_option("--corr", scenario.correlation_c, "Count field range as a fraction of the largest distance")->capture_default_str();
    app.add_flag("--no-jackknife", no_jackknife, "Skip the block jackknife in replicate");

    auto* fit_cmd = app.add_subcommand("fit", "Fit the model to a CSV");
    auto* jk_cmd = app.add_subcommand("jackknife", "Fit and estimate variances by block jackknife");
    auto* sim_cmd = app.add_subcommand("simulate", "Write one simulated dataset and its truth record");
    auto* rep_cmd = app.add_subcommand("replicate", "Run the simulation study and write summary tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    cfg.input_path = input;
    cfg.output_dir = out;
    cfg.fit.k_selection = k_mode == "fixed" ? RankSelection::Fixed : RankSelection::Aic;
    cfg.jackknife = !no_jackknife;
    if (!grid_covariates.empty()) cfg.grid_covariates = std::filesystem::path(grid_covariates);
    scenario.zero_inflation = zero_inflation == 70 ? ZeroInflation::P70 : ZeroInflation::P40;
    scenario.seed = cfg.fit.seed;

    try {
        cfg.ingest.phi_covars = parse_name_list(phi_covars);
        cfg.ingest.lambda_covars = parse_name_list(lambda_covars);
        if (fit_cmd->parsed()) {
            cfg.subcommand = Subcommand::Fit;
            run_fit(cfg);
        } else if (jk_cmd->parsed()) {
            cfg.subcommand = Subcommand::Jackknife;
            run_jackknife(cfg);
        } else if (sim_cmd->parsed()) {
            cfg.subcommand = Subcommand::Simulate;
            cfg.scenario = scenario;
            run_simulate(cfg);
        } else if (rep_cmd->parsed()) {
            cfg.subcommand = Subcommand::Replicate;
            cfg.scenario = scenario;
            std::signal(SIGINT, on_interrupt);
            if (!run_replicate(cfg, &g_stop)) return 130;
        }
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return exit_code(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 3;
    }
    return 0;
}
