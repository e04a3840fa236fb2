#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "slicelab/data_files.hpp"
#include "slicelab/eviction_sets.hpp"

namespace slicelab {

inline constexpr const char* kReportSchema = "slicelab.report.v1";

struct ExperimentConfig {
    std::string cpu = "i7-6700K";
    std::string scenario = "quiet"; // noisefree | quiet | busy
    std::uint64_t seed = 0;
    bool seed_set = false; // the seed is mandatory for reproducibility
    std::string out_dir = ".";
    std::uint32_t trials = 0; // 0: per-command default
    std::string data_dir;     // empty: bundled default
    bool full_llc = false;
    // latency model overrides; negative keeps the scenario preset value
    double lat_base = -1.0;
    double lat_hop = -1.0;
    double lat_sigma = -1.0;
    double lat_drift = -1.0;
    // eval arguments
    std::uint64_t addr = 0;
    std::uint64_t count = 64;
    std::uint64_t stride = 64;

    std::filesystem::path data() const {
        return data_dir.empty() ? default_data_dir() : std::filesystem::path(data_dir);
    }
    void validate() const;
};

LatencyModel scenario_model(const std::string& scenario);
LatencyModel resolved_model(const ExperimentConfig& cfg);

/// Experiment drivers. Each loads the preset, runs deterministically from the
/// config seed, writes CSV artifacts into out_dir plus a report.json, prints a
/// human-readable summary to stdout, and returns the report.
nlohmann::json cmd_eval(const ExperimentConfig& cfg);
nlohmann::json cmd_mappings(const ExperimentConfig& cfg);
nlohmann::json cmd_recover(const ExperimentConfig& cfg);
nlohmann::json cmd_classify_bench(const ExperimentConfig& cfg);
nlohmann::json cmd_evict_bench(const ExperimentConfig& cfg);
nlohmann::json cmd_propagate_stats(const ExperimentConfig& cfg);

} // namespace slicelab
