#include <cstdio>
#include <exception>

#include "CLI11.hpp"
#include "slicelab/errors.hpp"
#include "slicelab/experiments.hpp"

namespace {

using slicelab::ExperimentConfig;

void add_common(CLI::App* cmd, ExperimentConfig& cfg) {
    cmd->add_option("--cpu", cfg.cpu, "processor preset name");
    cmd->add_option("--seed", cfg.seed, "RNG seed (required)")->required();
    cmd->add_option("--scenario", cfg.scenario, "noisefree|quiet|busy");
    cmd->add_option("--out", cfg.out_dir, "output directory");
    cmd->add_option("--trials", cfg.trials, "trial count (0: command default)");
    cmd->add_option("--data", cfg.data_dir, "data directory override");
    cmd->add_option("--lat-base", cfg.lat_base, "latency model: base ticks");
    cmd->add_option("--lat-hop", cfg.lat_hop, "latency model: ticks per ring hop");
    cmd->add_option("--lat-sigma", cfg.lat_sigma, "latency model: per-access noise sigma");
    cmd->add_option("--lat-drift", cfg.lat_drift, "latency model: common-mode drift sigma");
    cmd->set_config("--config"); // flat key=value file; flags override it
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sliced last-level cache eviction set simulation toolkit"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    nlohmann::json (*command)(const ExperimentConfig&) = nullptr;

    auto* eval = app.add_subcommand("eval", "evaluate the slice hash over an address range");
    add_common(eval, cfg);
    eval->add_option("--addr", cfg.addr, "start address");
    eval->add_option("--count", cfg.count, "number of addresses");
    eval->add_option("--stride", cfg.stride, "address stride");
    eval->callback([&] { command = slicelab::cmd_eval; });

    auto* mappings = app.add_subcommand("mappings", "enumerate page-slice mappings");
    add_common(mappings, cfg);
    mappings->callback([&] { command = slicelab::cmd_mappings; });

    auto* recover = app.add_subcommand("recover", "recover the slice function from lookups");
    add_common(recover, cfg);
    recover->callback([&] { command = slicelab::cmd_recover; });

    auto* classify = app.add_subcommand("classify-bench", "benchmark slice classifiers");
    add_common(classify, cfg);
    classify->callback([&] { command = slicelab::cmd_classify_bench; });

    auto* evict = app.add_subcommand("evict-bench", "benchmark eviction set generation");
    add_common(evict, cfg);
    evict->add_flag("--full", cfg.full_llc, "whole-LLC scenario instead of one page offset");
    evict->callback([&] { command = slicelab::cmd_evict_bench; });

    auto* propagate = app.add_subcommand("propagate-stats", "offset propagation statistics");
    add_common(propagate, cfg);
    propagate->callback([&] { command = slicelab::cmd_propagate_stats; });

    try {
        app.parse(argc, argv);
        for (CLI::App* sub : app.get_subcommands())
            cfg.seed_set = cfg.seed_set || sub->count("--seed") > 0;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // help prints cleanly, bad usage is 2
    }

    try {
        (void)command(cfg);
        return 0;
    } catch (const slicelab::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.code() == slicelab::Errc::config_error ? 2 : 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
