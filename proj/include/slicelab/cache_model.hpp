#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "slicelab/rng.hpp"
#include "slicelab/slice_function.hpp"

namespace slicelab {

struct CacheConfig {
    std::string name;
    std::uint32_t l1_sets = 64;
    std::uint32_t l1_ways = 8;
    std::uint32_t l2_sets = 1024;
    std::uint32_t l2_ways = 4;
    std::uint32_t llc_sets_per_slice = 1024;
    std::uint32_t llc_ways = 16;
    std::uint32_t subslices_per_slice = 2;
    bool inclusive = true;
    std::uint64_t subslice_mask = 0x444224440ull; // model constant, see data/cache_configs.txt
    double eviction_noise = 0.0;                  // probability of a spurious eviction per access
    SliceFunctionSpec slice_spec;

    std::uint32_t slice_count() const { return slice_spec.slice_count; }
    std::uint64_t llc_lines() const {
        return std::uint64_t{slice_count()} * subslices_per_slice * llc_sets_per_slice * llc_ways;
    }
    std::uint64_t llc_bytes() const { return llc_lines() * 64; }
    /// Distinct (slice, sub-slice, set) classes reachable from one page offset.
    std::uint64_t classes_per_offset() const {
        return std::uint64_t{slice_count()} * subslices_per_slice *
               (llc_sets_per_slice / kLinesPerPage);
    }
    void validate() const;
};

struct CongruenceClass {
    SliceIndex slice = 0;
    std::uint32_t subslice = 0;
    std::uint32_t set = 0;

    auto operator<=>(const CongruenceClass&) const = default;
};

/// LLC congruence class of a physical address: slice from the hash, sub-slice
/// from the parity of subslice_mask, set from bits [6, 6+log2(sets)).
CongruenceClass llc_class(const CacheConfig& cfg, PhysAddr p);

std::uint32_t l2_set_index(const CacheConfig& cfg, PhysAddr p);

/// Virtual-to-physical mapping with uniformly random page frames, allocated on
/// first touch. Frames are unique, so distinct pages never alias.
class AddressSpace {
public:
    AddressSpace(std::uint32_t phys_bits, std::uint64_t seed)
        : phys_bits_(phys_bits), rng_(seed) {}

    PhysAddr translate(VirtAddr v);

    /// Next unused virtual page base, one page per call starting at 0x10000000.
    VirtAddr alloc_page();

    std::size_t pages_allocated() const { return page_table_.size(); }

private:
    std::uint32_t phys_bits_;
    Rng rng_;
    VirtAddr next_page_ = 0x10000000ull >> kPageBits;
    std::unordered_map<std::uint64_t, std::uint64_t> page_table_; // vpage -> pframe
    std::unordered_map<std::uint64_t, bool> frames_used_;
};

enum class HitLevel { L1, L2, LLC, RAM };

struct CacheCounters {
    std::uint64_t accesses = 0;
    std::uint64_t l1_hits = 0;
    std::uint64_t l2_hits = 0;
    std::uint64_t llc_hits = 0;
    std::uint64_t ram_accesses = 0;
    std::uint64_t eviction_tests = 0;
    std::uint64_t l2_eviction_tests = 0;
};

/// Set-associative L1/L2/LLC simulator with true LRU per set.
///
/// The private caches form an inclusive pair (an L2 eviction back-invalidates
/// the L1 copy), so a set of l2_ways congruent lines evicts a target from both
/// private levels. With an inclusive LLC the whole chain is inclusive and an
/// LLC eviction back-invalidates everything. In non-inclusive mode the LLC
/// acts as a victim cache for L2 while a snoop-filter directory with LLC
/// geometry tracks every cached line; losing the directory entry forces the
/// line out of the whole hierarchy. Only eviction-test semantics are
/// modelled, not coherence.
class CacheHierarchy {
public:
    CacheHierarchy(const CacheConfig& cfg, std::uint64_t seed);

    HitLevel access(PhysAddr p);
    void clflush(PhysAddr p);
    void flush_all();

    bool resident(HitLevel level, PhysAddr p) const; // test visibility, no LRU update

    const CacheConfig& config() const { return cfg_; }
    CacheCounters& counters() { return counters_; }
    const CacheCounters& counters() const { return counters_; }

private:
    struct SetArray {
        std::uint32_t ways;
        std::vector<std::vector<std::uint64_t>> sets; // each MRU-first

        bool touch(std::size_t set, std::uint64_t line);
        bool contains(std::size_t set, std::uint64_t line) const;
        // Inserts as MRU; returns the evicted line or 0 (0 is never a valid line here).
        std::uint64_t insert(std::size_t set, std::uint64_t line);
        void remove(std::size_t set, std::uint64_t line);
        void clear();
    };

    std::size_t l1_index(std::uint64_t line) const;
    std::size_t l2_index(std::uint64_t line) const;
    std::size_t llc_index(std::uint64_t line) const;

    void back_invalidate_private(std::uint64_t line);
    void evict_everywhere(std::uint64_t line);
    void fill_private(std::uint64_t line);
    void maybe_noise_evict(std::size_t llc_set);

    CacheConfig cfg_;
    Rng rng_;
    CacheCounters counters_;
    SetArray l1_, l2_, llc_, snoop_;
    bool has_snoop_ = false;
};

struct TraversalPattern {
    std::uint32_t passes = 2; // forward passes over the set
};

/// True iff accessing the target, traversing the set, then re-accessing the
/// target misses every cache level. Uses simulated state only.
bool test_eviction(CacheHierarchy& h, AddressSpace& space, VirtAddr target,
                   std::span<const VirtAddr> set, const TraversalPattern& pattern = {});

/// True iff the traversal pushes the target out of the private caches
/// (re-access services from LLC or RAM).
bool test_l2_eviction(CacheHierarchy& h, AddressSpace& space, VirtAddr target,
                      std::span<const VirtAddr> set, const TraversalPattern& pattern = {});

} // namespace slicelab
