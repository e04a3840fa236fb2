#include "slicelab/cache_model.hpp"

#include <algorithm>
#include <bit>

#include "slicelab/errors.hpp"

namespace slicelab {

namespace {

constexpr std::uint64_t kNoLine = ~0ull;

bool power_of_two(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

} // namespace

void CacheConfig::validate() const {
    if (!power_of_two(l1_sets) || !power_of_two(l2_sets) || !power_of_two(llc_sets_per_slice))
        raise(Errc::config_error, name + ": set counts must be powers of two");
    if (l1_ways == 0 || l2_ways == 0 || llc_ways == 0)
        raise(Errc::config_error, name + ": way counts must be positive");
    if (subslices_per_slice != 1 && subslices_per_slice != 2)
        raise(Errc::config_error, name + ": subslices_per_slice must be 1 or 2");
    if (llc_sets_per_slice < kLinesPerPage)
        raise(Errc::config_error, name + ": LLC sets per slice below one page of lines");
    if (eviction_noise < 0.0 || eviction_noise >= 1.0)
        raise(Errc::config_error, name + ": eviction_noise out of range");
    slice_spec.validate();
}

CongruenceClass llc_class(const CacheConfig& cfg, PhysAddr p) {
    CongruenceClass cls;
    cls.slice = eval_slice(cfg.slice_spec, p);
    cls.subslice = cfg.subslices_per_slice == 1
                       ? 0
                       : static_cast<std::uint32_t>(std::popcount(p & cfg.subslice_mask) & 1);
    cls.set = static_cast<std::uint32_t>((p >> kLineBits) & (cfg.llc_sets_per_slice - 1));
    return cls;
}

std::uint32_t l2_set_index(const CacheConfig& cfg, PhysAddr p) {
    return static_cast<std::uint32_t>((p >> kLineBits) & (cfg.l2_sets - 1));
}

PhysAddr AddressSpace::translate(VirtAddr v) {
    const std::uint64_t vpage = v >> kPageBits;
    auto it = page_table_.find(vpage);
    if (it == page_table_.end()) {
        const std::uint64_t frame_count = 1ull << (phys_bits_ - kPageBits);
        std::uint64_t frame;
        do {
            frame = rng_.below(frame_count);
        } while (frames_used_.contains(frame));
        frames_used_.emplace(frame, true);
        it = page_table_.emplace(vpage, frame).first;
    }
    return (it->second << kPageBits) | (v & ((1ull << kPageBits) - 1));
}

VirtAddr AddressSpace::alloc_page() { return (next_page_++) << kPageBits; }

bool CacheHierarchy::SetArray::touch(std::size_t set, std::uint64_t line) {
    auto& s = sets[set];
    auto it = std::find(s.begin(), s.end(), line);
    if (it == s.end())
        return false;
    s.erase(it);
    s.insert(s.begin(), line);
    return true;
}

bool CacheHierarchy::SetArray::contains(std::size_t set, std::uint64_t line) const {
    const auto& s = sets[set];
    return std::find(s.begin(), s.end(), line) != s.end();
}

std::uint64_t CacheHierarchy::SetArray::insert(std::size_t set, std::uint64_t line) {
    auto& s = sets[set];
    s.insert(s.begin(), line);
    if (s.size() <= ways)
        return kNoLine;
    std::uint64_t victim = s.back();
    s.pop_back();
    return victim;
}

void CacheHierarchy::SetArray::remove(std::size_t set, std::uint64_t line) {
    auto& s = sets[set];
    auto it = std::find(s.begin(), s.end(), line);
    if (it != s.end())
        s.erase(it);
}

void CacheHierarchy::SetArray::clear() {
    for (auto& s : sets)
        s.clear();
}

CacheHierarchy::CacheHierarchy(const CacheConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    l1_.ways = cfg_.l1_ways;
    l1_.sets.resize(cfg_.l1_sets);
    l2_.ways = cfg_.l2_ways;
    l2_.sets.resize(cfg_.l2_sets);
    const std::size_t llc_sets =
        std::size_t{cfg_.slice_count()} * cfg_.subslices_per_slice * cfg_.llc_sets_per_slice;
    llc_.ways = cfg_.llc_ways;
    llc_.sets.resize(llc_sets);
    if (!cfg_.inclusive) {
        has_snoop_ = true;
        snoop_.ways = cfg_.llc_ways;
        snoop_.sets.resize(llc_sets);
    }
}

std::size_t CacheHierarchy::l1_index(std::uint64_t line) const {
    return line & (cfg_.l1_sets - 1);
}

std::size_t CacheHierarchy::l2_index(std::uint64_t line) const {
    return line & (cfg_.l2_sets - 1);
}

std::size_t CacheHierarchy::llc_index(std::uint64_t line) const {
    const CongruenceClass cls = llc_class(cfg_, line << kLineBits);
    return (std::size_t{cls.slice} * cfg_.subslices_per_slice + cls.subslice) *
               cfg_.llc_sets_per_slice +
           cls.set;
}

void CacheHierarchy::back_invalidate_private(std::uint64_t line) {
    l2_.remove(l2_index(line), line);
    l1_.remove(l1_index(line), line);
}

void CacheHierarchy::evict_everywhere(std::uint64_t line) {
    l1_.remove(l1_index(line), line);
    l2_.remove(l2_index(line), line);
    llc_.remove(llc_index(line), line);
    if (has_snoop_)
        snoop_.remove(llc_index(line), line);
}

// A private-cache fill: the line becomes L1- and L2-resident, displaced lines
// cascade. An L2 victim leaves the private caches (back-invalidating L1 keeps
// L1 within L2); in non-inclusive mode it moves into the LLC victim cache
// while its snoop-filter entry stays alive.
void CacheHierarchy::fill_private(std::uint64_t line) {
    std::uint64_t l2_victim = l2_.insert(l2_index(line), line);
    if (l2_victim != kNoLine) {
        l1_.remove(l1_index(l2_victim), l2_victim);
        if (has_snoop_) {
            std::uint64_t lv = llc_.insert(llc_index(l2_victim), l2_victim);
            if (lv != kNoLine)
                evict_everywhere(lv);
        }
    }
    l1_.insert(l1_index(line), line); // L1 victim stays L2-resident
}

void CacheHierarchy::maybe_noise_evict(std::size_t llc_set) {
    if (cfg_.eviction_noise == 0.0)
        return;
    if (rng_.uniform01() >= cfg_.eviction_noise)
        return;
    SetArray& arr = has_snoop_ ? snoop_ : llc_;
    auto& s = arr.sets[llc_set];
    if (s.empty())
        return;
    const std::uint64_t victim = s[rng_.below(s.size())];
    if (has_snoop_) {
        evict_everywhere(victim);
    } else {
        arr.remove(llc_set, victim);
        back_invalidate_private(victim);
    }
}

HitLevel CacheHierarchy::access(PhysAddr p) {
    ++counters_.accesses;
    const std::uint64_t line = p >> kLineBits;
    const std::size_t i3 = llc_index(line);

    HitLevel level;
    if (l1_.touch(l1_index(line), line)) {
        level = HitLevel::L1;
        ++counters_.l1_hits;
    } else if (l2_.touch(l2_index(line), line)) {
        level = HitLevel::L2;
        ++counters_.l2_hits;
        l1_.insert(l1_index(line), line);
    } else if (llc_.touch(i3, line)) {
        level = HitLevel::LLC;
        ++counters_.llc_hits;
        if (has_snoop_) {
            llc_.remove(i3, line); // victim cache hands the line back to the core
            snoop_.touch(i3, line);
        }
        fill_private(line);
    } else {
        level = HitLevel::RAM;
        ++counters_.ram_accesses;
        if (cfg_.inclusive) {
            std::uint64_t victim = llc_.insert(i3, line);
            if (victim != kNoLine)
                back_invalidate_private(victim);
        } else {
            // The snoop filter acts as a directory over all cached copies;
            // losing the entry forces the line out of the hierarchy.
            std::uint64_t sf_victim = snoop_.insert(i3, line);
            if (sf_victim != kNoLine)
                evict_everywhere(sf_victim);
        }
        fill_private(line);
    }
    maybe_noise_evict(i3);
    return level;
}

void CacheHierarchy::clflush(PhysAddr p) {
    const std::uint64_t line = p >> kLineBits;
    l1_.remove(l1_index(line), line);
    l2_.remove(l2_index(line), line);
    llc_.remove(llc_index(line), line);
    if (has_snoop_)
        snoop_.remove(llc_index(line), line);
}

void CacheHierarchy::flush_all() {
    l1_.clear();
    l2_.clear();
    llc_.clear();
    if (has_snoop_)
        snoop_.clear();
}

bool CacheHierarchy::resident(HitLevel level, PhysAddr p) const {
    const std::uint64_t line = p >> kLineBits;
    switch (level) {
    case HitLevel::L1:
        return l1_.contains(l1_index(line), line);
    case HitLevel::L2:
        return l2_.contains(l2_index(line), line);
    case HitLevel::LLC:
        return llc_.contains(llc_index(line), line);
    default:
        return false;
    }
}

// Both tests flush the target before its priming access, so it enters every
// level with fresh replacement state; otherwise stale recency left over from
// earlier tests lets unrelated congruent traffic evict it mid-test.

bool test_eviction(CacheHierarchy& h, AddressSpace& space, VirtAddr target,
                   std::span<const VirtAddr> set, const TraversalPattern& pattern) {
    ++h.counters().eviction_tests;
    const PhysAddr tp = space.translate(target);
    h.clflush(tp);
    h.access(tp);
    for (std::uint32_t pass = 0; pass < pattern.passes; ++pass)
        for (VirtAddr a : set)
            h.access(space.translate(a));
    return h.access(tp) == HitLevel::RAM;
}

bool test_l2_eviction(CacheHierarchy& h, AddressSpace& space, VirtAddr target,
                      std::span<const VirtAddr> set, const TraversalPattern& pattern) {
    ++h.counters().l2_eviction_tests;
    const PhysAddr tp = space.translate(target);
    // The set members are flushed as well: an L1-warm member never touches
    // the L2, and on parts whose L1 holds more ways than the L2 a whole
    // minimal set can stay sheltered that way.
    h.clflush(tp);
    for (VirtAddr a : set)
        h.clflush(space.translate(a));
    h.access(tp);
    for (std::uint32_t pass = 0; pass < pattern.passes; ++pass)
        for (VirtAddr a : set)
            h.access(space.translate(a));
    const HitLevel level = h.access(tp);
    return level == HitLevel::LLC || level == HitLevel::RAM;
}

} // namespace slicelab
