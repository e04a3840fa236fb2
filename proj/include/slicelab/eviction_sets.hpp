#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "slicelab/cache_model.hpp"
#include "slicelab/slice_classifier.hpp"
#include "slicelab/slice_function.hpp"
#include "slicelab/timing_oracle.hpp"

namespace slicelab {

struct CandidateSet {
    std::uint8_t offset_line = 0; // shared page line offset of all members
    std::vector<VirtAddr> addrs;
    bool l2_filtered = false;
    bool slice_filtered = false;
};

struct EvictionSet {
    std::vector<VirtAddr> addrs;
    std::uint8_t offset_line = 0;
    SliceIndex predicted_slice = 0; // label space, opaque partition id
    std::uint32_t l2_set_id = 0;    // attacker-local id
    enum class Via { conventional, mirror } via = Via::conventional;
    CongruenceClass tag{}; // ground truth, reporting and tests only
};

struct GenerationStats {
    std::uint64_t classes_total = 0;
    std::uint64_t found = 0;
    std::uint64_t duplicates = 0; // ground-truth class collisions
    std::uint64_t missing = 0;    // classes no set covers
    std::uint64_t conventional = 0;
    std::uint64_t mirrored = 0;
    std::uint64_t failed_builds = 0;
    double conventional_fraction = 0.0; // conventional / found
    std::uint64_t eviction_tests = 0;
    std::uint64_t l2_eviction_tests = 0;
    std::uint64_t cache_accesses = 0;
    std::uint64_t gate_invocations = 0;

    double coverage() const {
        return classes_total == 0
                   ? 0.0
                   : static_cast<double>(classes_total - missing) / classes_total;
    }
};

struct EvictionSetCollection {
    std::vector<EvictionSet> sets;
    GenerationStats stats;
};

struct PropagationResult {
    std::vector<EvictionSet> mirrors;             // one per single-slice offset
    std::vector<std::uint8_t> conventional_offsets; // offsets needing a fresh build
    double conventional_fraction = 0.0;           // flagged / 64
};

enum class GenerationScenario { page_offset, full_llc };

struct PipelineConfig {
    CacheConfig cache;
    LatencyModel latency = LatencyModel::quiet();
    GateConfig gate;
    ClassifierConfig classifier;
    std::uint32_t core = 0;
    double size_factor = 3.0;        // candidate buffer as a multiple of LLC size
    std::uint32_t group_round_budget = 4096;
    std::uint32_t removal_votes = 1; // confirmations per pruned group
    std::uint32_t verify_votes = 1;  // majority votes on the final reduce check
    bool slice_filter_enabled = true;
    bool propagation_enabled = true;
    TraversalPattern traversal;
    std::uint64_t seed = 1;
};

/// End-to-end eviction set generation against the simulated hierarchy: page
/// candidates, L2 eviction sets and filtering, comparator-based slice
/// labelling, group-testing reduction, and offset propagation. Owns the
/// simulator state; one instance per run.
class EvictionPipeline {
public:
    explicit EvictionPipeline(const PipelineConfig& cfg);

    /// One candidate per fresh page at the given line offset; the page pool
    /// holds size_factor times the LLC size and is shared across offsets.
    CandidateSet generate_candidates(std::uint8_t offset_line, double size_factor);
    CandidateSet generate_candidates(std::uint8_t offset_line) {
        return generate_candidates(offset_line, cfg_.size_factor);
    }

    /// Minimal L2 eviction sets (size l2_ways) for every L2 set reachable at
    /// the offset, discovered by group testing over the candidate pool.
    std::vector<EvictionSet> build_l2_eviction_sets(std::uint8_t offset_line);

    /// Keeps candidates whose L2 eviction-set membership matches the target's.
    CandidateSet l2_filter(const CandidateSet& candidates, VirtAddr target,
                           std::span<const EvictionSet> l2_sets);

    /// Keeps candidates whose predicted slice label matches the target's.
    CandidateSet slice_filter(const CandidateSet& candidates, VirtAddr target);

    /// Prunes an evicting candidate pool to a minimal eviction set by
    /// splitting into ways+1 random groups and discarding removable groups.
    EvictionSet group_test_reduce(const CandidateSet& candidates, VirtAddr target);

    /// Mirrors of a set across all 64 page offsets (valid for linear specs).
    std::vector<EvictionSet> propagate_linear(const EvictionSet& set);

    /// Mirrors accepted only where the classified page mappings agree on one
    /// slice for every member; other offsets are flagged for conventional
    /// construction. No contention tests are used for acceptance.
    PropagationResult propagate_nonlinear(const EvictionSet& set);

    /// Single-offset mirror, or nullopt when the members straddle slices
    /// there. Throws Errc::missing_mapping without classified member pages.
    std::optional<EvictionSet> mirror_at(const EvictionSet& set, std::uint8_t offset_line);

    /// Sets in the collection matching the target's predicted slice label and
    /// L2 set id at the given offset.
    std::vector<std::size_t> test_eviction_filter(VirtAddr target,
                                                  const EvictionSetCollection& collection,
                                                  std::uint8_t offset_line);

    EvictionSetCollection generate(GenerationScenario scenario);

    // Simulator access for tests and reporting.
    AddressSpace& space() { return space_; }
    CacheHierarchy& hierarchy() { return hier_; }
    TimingOracle& oracle() { return oracle_; }
    const PageSliceMappingTable& mapping_table() const { return table_; }
    const PipelineConfig& config() const { return cfg_; }

    /// Classified mapping index (label space) of the candidate page, cached.
    std::size_t classify_page(VirtAddr page_base);
    /// Attacker-visible L2 set id of an address, cached per page.
    std::uint32_t l2_set_id(VirtAddr addr);
    /// Predicted slice label of an address derived from its page mapping.
    SliceIndex label_at(VirtAddr addr);

    CongruenceClass ground_truth_class(VirtAddr addr);

private:
    void ensure_pool();
    void ensure_classifier();
    void ensure_l2_sets();
    bool covered_by_existing(VirtAddr target, const EvictionSetCollection& collection,
                             std::uint8_t offset_line);
    std::vector<VirtAddr> prune_to_minimal(std::vector<VirtAddr> pool, VirtAddr target);
    void finalise_stats(EvictionSetCollection& collection, GenerationScenario scenario);
    std::uint64_t page_of(VirtAddr addr) const { return addr >> kPageBits; }
    VirtAddr at_offset(VirtAddr addr, std::uint8_t offset_line) const {
        return (addr & ~((1ull << kPageBits) - 1)) |
               (static_cast<VirtAddr>(offset_line) << kLineBits);
    }

    PipelineConfig cfg_;
    AddressSpace space_;
    CacheHierarchy hier_;
    TimingOracle oracle_;
    Rng rng_;
    PageSliceMappingTable table_;

    std::vector<VirtAddr> pool_pages_; // page base addresses
    std::vector<EvictionSet> l2_sets_; // built at offset 0, mirrored elsewhere

    // Classification machinery, built on first use from one profiling page.
    bool classifier_ready_ = false;
    CompareSetResult compare_;
    ComparatorProfile profile_;
    DecisionTree tree_;
    ConfusionMatrix likelihood_;
    std::optional<OracleRaceDriver> driver_;

    std::unordered_map<std::uint64_t, std::size_t> page_mapping_;  // vpage -> table index
    std::unordered_map<std::uint64_t, std::uint32_t> page_l2_id_;  // vpage -> l2 set id
};

/// Collection rows as CSV: offset, predicted slice, l2 set, ground truth
/// class, member count and construction route.
std::string collection_csv(const EvictionSetCollection& collection);

} // namespace slicelab
