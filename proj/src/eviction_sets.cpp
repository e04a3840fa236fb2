#include "slicelab/eviction_sets.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_set>

#include "slicelab/errors.hpp"

namespace slicelab {

namespace {

std::uint32_t linear_offset_label(const SliceFunctionSpec& spec, std::uint8_t offset) {
    return offset_stage_index(spec, offset);
}

using EvictionTest = std::function<bool(std::span<const VirtAddr>)>;

// n+1-group pruning with early termination and a fresh random assignment per
// round. Keeps at least `ways` members; the caller verifies the result.
// removal_votes > 1 re-confirms each removable group, suppressing noise-driven
// false positives that would discard needed members.
void prune_groups(std::vector<VirtAddr>& pool, std::uint32_t ways, const EvictionTest& evicts,
                  Rng& rng, std::uint32_t budget, std::uint32_t removal_votes) {
    const std::uint32_t groups = ways + 1;
    std::uint32_t rounds = 0;
    std::vector<VirtAddr> rest;
    while (pool.size() > ways) {
        if (++rounds > budget)
            raise(Errc::iteration_budget, "group testing made no progress");
        for (std::size_t i = pool.size(); i > 1; --i)
            std::swap(pool[i - 1], pool[rng.below(i)]);
        const std::size_t chunk = (pool.size() + groups - 1) / groups;
        bool removed = false;
        for (std::uint32_t g = 0; g < groups && !removed; ++g) {
            const std::size_t lo = static_cast<std::size_t>(g) * chunk;
            if (lo >= pool.size())
                break;
            const std::size_t hi = std::min(pool.size(), lo + chunk);
            if (pool.size() - (hi - lo) < ways)
                continue;
            rest.clear();
            rest.insert(rest.end(), pool.begin(), pool.begin() + lo);
            rest.insert(rest.end(), pool.begin() + hi, pool.end());
            bool removable = true;
            for (std::uint32_t v = 0; v < removal_votes && removable; ++v)
                removable = evicts(rest);
            if (removable) { // group is removable, prune it immediately
                pool.swap(rest);
                removed = true;
            }
        }
    }
}

} // namespace

EvictionPipeline::EvictionPipeline(const PipelineConfig& cfg)
    : cfg_(cfg),
      space_(cfg.cache.slice_spec.phys_bits, cfg.seed ^ 0xa110c),
      hier_(cfg.cache, cfg.seed ^ 0xcac4e),
      oracle_(cfg.latency, RingTopology::standard(std::max(4u, cfg.cache.slice_count()),
                                                  cfg.cache.slice_count()),
              cfg.seed ^ 0x04ac1e),
      rng_(cfg.seed ^ 0x6e0),
      table_(enumerate_page_mappings(cfg.cache.slice_spec)) {}

void EvictionPipeline::ensure_pool() {
    if (!pool_pages_.empty())
        return;
    const auto pages = static_cast<std::size_t>(cfg_.size_factor *
                                                (cfg_.cache.llc_bytes() >> kPageBits));
    pool_pages_.reserve(pages);
    for (std::size_t i = 0; i < pages; ++i)
        pool_pages_.push_back(space_.alloc_page());
}

CandidateSet EvictionPipeline::generate_candidates(std::uint8_t offset_line, double size_factor) {
    if (offset_line >= kLinesPerPage)
        raise(Errc::config_error, "generate_candidates: offset out of range");
    if (size_factor == cfg_.size_factor)
        ensure_pool();
    CandidateSet out;
    out.offset_line = offset_line;
    if (size_factor == cfg_.size_factor) {
        out.addrs.reserve(pool_pages_.size());
        for (VirtAddr page : pool_pages_)
            out.addrs.push_back(at_offset(page, offset_line));
        return out;
    }
    const auto pages = static_cast<std::size_t>(size_factor *
                                                (cfg_.cache.llc_bytes() >> kPageBits));
    for (std::size_t i = 0; i < pages; ++i)
        out.addrs.push_back(at_offset(space_.alloc_page(), offset_line));
    return out;
}

std::vector<VirtAddr> EvictionPipeline::prune_to_minimal(std::vector<VirtAddr> pool,
                                                         VirtAddr target) {
    const std::uint32_t ways = cfg_.cache.llc_ways;
    auto evicts = [&](std::span<const VirtAddr> set) {
        return test_eviction(hier_, space_, target, set, cfg_.traversal);
    };
    bool pool_evicts = false;
    for (std::uint32_t v = 0; v < cfg_.removal_votes && !pool_evicts; ++v)
        pool_evicts = pool.size() >= ways && evicts(pool);
    if (!pool_evicts)
        raise(Errc::cannot_reduce, "candidate pool does not evict the target");

    prune_groups(pool, ways, evicts, rng_, cfg_.group_round_budget, cfg_.removal_votes);

    std::uint32_t votes = 0;
    for (std::uint32_t v = 0; v < cfg_.verify_votes; ++v)
        votes += evicts(pool) ? 1 : 0;
    if (votes * 2 < cfg_.verify_votes)
        raise(Errc::cannot_reduce, "reduced set failed the final eviction check");
    return pool;
}

EvictionSet EvictionPipeline::group_test_reduce(const CandidateSet& candidates, VirtAddr target) {
    std::vector<VirtAddr> pool;
    pool.reserve(candidates.addrs.size());
    for (VirtAddr a : candidates.addrs)
        if (a != target)
            pool.push_back(a);

    EvictionSet set;
    set.addrs = prune_to_minimal(std::move(pool), target);
    set.offset_line = candidates.offset_line;
    set.via = EvictionSet::Via::conventional;
    set.tag = ground_truth_class(target);
    return set;
}

std::vector<EvictionSet> EvictionPipeline::build_l2_eviction_sets(std::uint8_t offset_line) {
    ensure_pool();
    const std::uint32_t wanted = cfg_.cache.l2_sets / kLinesPerPage;
    const std::uint32_t ways = cfg_.cache.l2_ways;
    if (!cfg_.cache.inclusive && cfg_.cache.l2_ways > cfg_.cache.llc_ways)
        raise(Errc::config_error,
              cfg_.cache.name + ": snoop-filter ways below l2_ways; directory contention "
                                "pre-empts L2 contention and L2-set-pure eviction sets do not "
                                "exist in this model");

    std::vector<EvictionSet> sets;
    auto l2_evicts = [&](VirtAddr target, std::span<const VirtAddr> set) {
        return test_l2_eviction(hier_, space_, target, set, cfg_.traversal);
    };

    std::unordered_set<VirtAddr> used;
    for (VirtAddr page : pool_pages_) {
        if (sets.size() >= wanted)
            break;
        const VirtAddr target = at_offset(page, offset_line);
        if (used.contains(target))
            continue;
        bool covered = false;
        for (const EvictionSet& s : sets)
            if ((covered = l2_evicts(target, s.addrs)))
                break;
        if (covered)
            continue;

        // Reduce against a bounded slice of the pool; with uniform frames a
        // few thousand pages already hold dozens of lines per L2 set, and
        // group testing cost scales with the starting size.
        const std::size_t cap = std::max<std::size_t>(2048, 64 * std::size_t{wanted});
        std::vector<VirtAddr> pool;
        for (VirtAddr p : pool_pages_) {
            if (pool.size() >= cap)
                break;
            if (p != page)
                pool.push_back(at_offset(p, offset_line));
        }
        if (pool.size() < ways || !l2_evicts(target, pool))
            raise(Errc::pool_exhausted, "candidate pool cannot build an L2 eviction set");

        auto evicts = [&](std::span<const VirtAddr> set) { return l2_evicts(target, set); };
        prune_groups(pool, ways, evicts, rng_, cfg_.group_round_budget, cfg_.removal_votes);
        if (!l2_evicts(target, pool))
            raise(Errc::pool_exhausted, "reduced L2 set failed the eviction check");

        EvictionSet set;
        set.addrs = std::move(pool);
        set.offset_line = offset_line;
        set.l2_set_id = static_cast<std::uint32_t>(sets.size());
        used.insert(set.addrs.begin(), set.addrs.end());
        sets.push_back(std::move(set));
    }
    if (sets.size() < wanted)
        raise(Errc::pool_exhausted, "candidate pool does not reach every L2 set");
    return sets;
}

void EvictionPipeline::ensure_l2_sets() {
    if (!l2_sets_.empty())
        return;
    l2_sets_ = build_l2_eviction_sets(0);
    // Member pages are their own set's id; testing them against the set they
    // belong to would re-access them mid-traversal and report no eviction.
    for (const EvictionSet& s : l2_sets_)
        for (VirtAddr a : s.addrs)
            page_l2_id_.emplace(page_of(a), s.l2_set_id);
}

std::uint32_t EvictionPipeline::l2_set_id(VirtAddr addr) {
    const std::uint64_t page = page_of(addr);
    auto it = page_l2_id_.find(page);
    if (it != page_l2_id_.end())
        return it->second;
    ensure_l2_sets();

    // Mirror the discovered L2 sets to this address's offset; ids carry over.
    const auto offset_line = static_cast<std::uint8_t>((addr >> kLineBits) &
                                                       (kLinesPerPage - 1));
    std::uint32_t id = UINT32_MAX;
    std::vector<VirtAddr> mirrored;
    for (const EvictionSet& s : l2_sets_) {
        mirrored.clear();
        for (VirtAddr a : s.addrs)
            mirrored.push_back(at_offset(a, offset_line));
        if (test_l2_eviction(hier_, space_, addr, mirrored, cfg_.traversal)) {
            id = s.l2_set_id;
            break;
        }
    }
    page_l2_id_.emplace(page, id);
    return id;
}

CandidateSet EvictionPipeline::l2_filter(const CandidateSet& candidates, VirtAddr target,
                                         std::span<const EvictionSet> l2_sets) {
    auto member_id = [&](VirtAddr a) -> std::uint32_t {
        for (const EvictionSet& s : l2_sets)
            for (VirtAddr m : s.addrs)
                if (page_of(m) == page_of(a))
                    return s.l2_set_id; // literal member, no test needed
        for (const EvictionSet& s : l2_sets)
            if (test_l2_eviction(hier_, space_, a, s.addrs, cfg_.traversal))
                return s.l2_set_id;
        return UINT32_MAX;
    };
    const std::uint32_t target_id = member_id(target);
    CandidateSet out;
    out.offset_line = candidates.offset_line;
    out.l2_filtered = true;
    out.slice_filtered = candidates.slice_filtered;
    for (VirtAddr a : candidates.addrs)
        if (member_id(a) == target_id)
            out.addrs.push_back(a);
    return out;
}

void EvictionPipeline::ensure_classifier() {
    if (classifier_ready_)
        return;
    const SliceFunctionSpec& spec = cfg_.cache.slice_spec;
    driver_.emplace(oracle_, cfg_.gate, cfg_.core, [this](std::uint64_t phys) {
        return eval_slice(cfg_.cache.slice_spec, static_cast<PhysAddr>(phys));
    });

    const VirtAddr profile_page = space_.alloc_page();
    PageTargets targets{};
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        targets[o] = space_.translate(at_offset(profile_page, static_cast<std::uint8_t>(o)));

    compare_ = determine_compare_set(*driver_, targets, spec, table_, cfg_.classifier);
    std::vector<CalibrationTarget> calibration;
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        calibration.emplace_back(targets[o], compare_.page_labels[o]);
    profile_ = build_profile(*driver_, compare_.compare, calibration, cfg_.classifier.profile_reps);
    likelihood_ = confusion_from_profile(profile_, cfg_.classifier, cfg_.seed ^ 0xba7e5);
    tree_ = build_decision_tree(table_, spec.slice_count, cfg_.classifier);
    classifier_ready_ = true;
}

std::size_t EvictionPipeline::classify_page(VirtAddr page_base) {
    const std::uint64_t page = page_of(page_base);
    auto it = page_mapping_.find(page);
    if (it != page_mapping_.end())
        return it->second;
    ensure_classifier();

    PageTargets targets{};
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        targets[o] = space_.translate(at_offset(page_base, static_cast<std::uint8_t>(o)));

    std::size_t mapping;
    if (cfg_.cache.slice_spec.is_linear()) {
        mapping = bayesian_page(*driver_, targets, profile_, compare_.compare, table_, likelihood_,
                                cfg_.classifier)
                      .mapping;
    } else {
        try {
            mapping = classify_page_tree(*driver_, targets, profile_, compare_.compare, tree_,
                                         cfg_.classifier)
                          .mapping;
        } catch (const Error& e) {
            if (e.code() != Errc::classification_failure)
                throw;
            // Tree retries exhausted under noise: fall back to the slower
            // full-page method.
            mapping = closest_match(*driver_, targets, profile_, compare_.compare, table_,
                                    cfg_.classifier)
                          .index;
        }
    }
    page_mapping_.emplace(page, mapping);
    return mapping;
}

SliceIndex EvictionPipeline::label_at(VirtAddr addr) {
    const std::size_t mapping = classify_page(addr);
    const auto offset_line = static_cast<unsigned>((addr >> kLineBits) & (kLinesPerPage - 1));
    return table_.mappings[mapping][offset_line];
}

CongruenceClass EvictionPipeline::ground_truth_class(VirtAddr addr) {
    return llc_class(cfg_.cache, space_.translate(addr));
}

CandidateSet EvictionPipeline::slice_filter(const CandidateSet& candidates, VirtAddr target) {
    ensure_classifier();
    const SliceIndex target_label = label_at(target);
    CandidateSet out;
    out.offset_line = candidates.offset_line;
    out.l2_filtered = candidates.l2_filtered;
    out.slice_filtered = true;
    for (VirtAddr a : candidates.addrs)
        if (label_at(a) == target_label)
            out.addrs.push_back(a);
    return out;
}

std::vector<EvictionSet> EvictionPipeline::propagate_linear(const EvictionSet& set) {
    if (!cfg_.cache.slice_spec.is_linear())
        raise(Errc::config_error, "propagate_linear needs a linear slice function");
    std::vector<EvictionSet> mirrors;
    mirrors.reserve(kLinesPerPage);
    const std::uint32_t base_label = linear_offset_label(cfg_.cache.slice_spec, set.offset_line);
    for (unsigned o = 0; o < kLinesPerPage; ++o) {
        EvictionSet m;
        m.offset_line = static_cast<std::uint8_t>(o);
        m.l2_set_id = set.l2_set_id;
        m.predicted_slice =
            set.predicted_slice ^ base_label ^
            linear_offset_label(cfg_.cache.slice_spec, static_cast<std::uint8_t>(o));
        m.via = o == set.offset_line ? set.via : EvictionSet::Via::mirror;
        for (VirtAddr a : set.addrs)
            m.addrs.push_back(at_offset(a, static_cast<std::uint8_t>(o)));
        m.tag = ground_truth_class(m.addrs.front());
        mirrors.push_back(std::move(m));
    }
    return mirrors;
}

std::optional<EvictionSet> EvictionPipeline::mirror_at(const EvictionSet& set,
                                                       std::uint8_t offset_line) {
    if (!classifier_ready_)
        raise(Errc::missing_mapping, "no page mappings available; classify pages first");
    SliceIndex label = 0;
    for (std::size_t k = 0; k < set.addrs.size(); ++k) {
        auto it = page_mapping_.find(page_of(set.addrs[k]));
        if (it == page_mapping_.end())
            raise(Errc::missing_mapping, "member page has no classified mapping");
        const SliceIndex l = table_.mappings[it->second][offset_line];
        if (k == 0)
            label = l;
        else if (l != label)
            return std::nullopt; // mirror straddles slices, unusable
    }
    EvictionSet m;
    m.offset_line = offset_line;
    m.l2_set_id = set.l2_set_id;
    m.predicted_slice = label;
    m.via = EvictionSet::Via::mirror;
    for (VirtAddr a : set.addrs)
        m.addrs.push_back(at_offset(a, offset_line));
    m.tag = ground_truth_class(m.addrs.front());
    return m;
}

PropagationResult EvictionPipeline::propagate_nonlinear(const EvictionSet& set) {
    PropagationResult result;
    for (unsigned o = 0; o < kLinesPerPage; ++o) {
        if (o == set.offset_line)
            continue;
        if (auto m = mirror_at(set, static_cast<std::uint8_t>(o)))
            result.mirrors.push_back(std::move(*m));
        else
            result.conventional_offsets.push_back(static_cast<std::uint8_t>(o));
    }
    result.conventional_fraction =
        static_cast<double>(result.conventional_offsets.size()) / kLinesPerPage;
    return result;
}

std::vector<std::size_t> EvictionPipeline::test_eviction_filter(
    VirtAddr target, const EvictionSetCollection& collection, std::uint8_t offset_line) {
    const SliceIndex label = label_at(target);
    const std::uint32_t l2 = l2_set_id(target);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < collection.sets.size(); ++i) {
        const EvictionSet& s = collection.sets[i];
        if (s.offset_line == offset_line && s.predicted_slice == label && s.l2_set_id == l2)
            out.push_back(i);
    }
    return out;
}

bool EvictionPipeline::covered_by_existing(VirtAddr target,
                                           const EvictionSetCollection& collection,
                                           std::uint8_t offset_line) {
    std::vector<std::size_t> to_test;
    if (cfg_.slice_filter_enabled && classifier_ready_) {
        to_test = test_eviction_filter(target, collection, offset_line);
    } else {
        const std::uint32_t l2 = l2_set_id(target);
        for (std::size_t i = 0; i < collection.sets.size(); ++i)
            if (collection.sets[i].offset_line == offset_line &&
                collection.sets[i].l2_set_id == l2)
                to_test.push_back(i);
    }
    for (std::size_t i : to_test)
        if (test_eviction(hier_, space_, target, collection.sets[i].addrs, cfg_.traversal))
            return true;
    return false;
}

EvictionSetCollection EvictionPipeline::generate(GenerationScenario scenario) {
    ensure_pool();
    ensure_l2_sets();
    const bool nonlinear = !cfg_.cache.slice_spec.is_linear();
    const bool need_labels =
        cfg_.slice_filter_enabled ||
        (cfg_.propagation_enabled && nonlinear && scenario == GenerationScenario::full_llc);
    if (need_labels)
        ensure_classifier();

    EvictionSetCollection out;
    std::array<std::unordered_set<VirtAddr>, kLinesPerPage> members;

    auto add_set = [&](EvictionSet&& s) {
        members[s.offset_line].insert(s.addrs.begin(), s.addrs.end());
        out.sets.push_back(std::move(s));
    };

    // Every conventional build immediately spawns mirrors across the whole
    // page, in both directions: offsets already scanned pick up the classes
    // they were missing and later offsets start out mostly covered. A
    // candidate mirror is dropped when an accepted set already contains or
    // evicts its members.
    const bool propagate = cfg_.propagation_enabled && scenario == GenerationScenario::full_llc;
    auto spawn_mirrors = [&](const EvictionSet seed) { // by value: out.sets reallocates
        if (nonlinear)
            for (VirtAddr a : seed.addrs)
                (void)classify_page(a);
        for (unsigned o = 0; o < kLinesPerPage; ++o) {
            if (o == seed.offset_line)
                continue;
            const auto offset_line = static_cast<std::uint8_t>(o);
            std::optional<EvictionSet> m;
            if (nonlinear) {
                m = mirror_at(seed, offset_line);
                if (!m)
                    continue;
            } else {
                m = propagate_linear(seed)[offset_line];
            }
            if (members[offset_line].contains(m->addrs.front()))
                continue;
            if (covered_by_existing(m->addrs.front(), out, offset_line))
                continue;
            add_set(std::move(*m));
        }
    };

    auto build_offset = [&](std::uint8_t offset_line) {
        for (VirtAddr page : pool_pages_) {
            const VirtAddr target = at_offset(page, offset_line);
            if (members[offset_line].contains(target))
                continue;
            if (covered_by_existing(target, out, offset_line))
                continue;

            CandidateSet pool;
            pool.offset_line = offset_line;
            pool.l2_filtered = true;
            const std::uint32_t target_l2 = l2_set_id(target);
            const bool use_labels = cfg_.slice_filter_enabled;
            const SliceIndex target_label = use_labels ? label_at(target) : 0;
            for (VirtAddr p : pool_pages_) {
                const VirtAddr a = at_offset(p, offset_line);
                if (a == target || l2_set_id(a) != target_l2)
                    continue;
                if (use_labels && label_at(a) != target_label)
                    continue;
                pool.addrs.push_back(a);
            }
            pool.slice_filtered = use_labels;

            try {
                EvictionSet set = group_test_reduce(pool, target);
                set.l2_set_id = target_l2;
                set.predicted_slice = use_labels ? target_label : 0;
                const std::size_t seed_index = out.sets.size();
                add_set(std::move(set));
                if (propagate)
                    spawn_mirrors(out.sets[seed_index]);
            } catch (const Error& e) {
                if (e.code() != Errc::cannot_reduce && e.code() != Errc::iteration_budget)
                    throw;
                ++out.stats.failed_builds;
            }
        }
    };

    const unsigned offsets = scenario == GenerationScenario::full_llc ? kLinesPerPage : 1;
    for (unsigned o = 0; o < offsets; ++o)
        build_offset(static_cast<std::uint8_t>(o));

    finalise_stats(out, scenario);
    return out;
}

void EvictionPipeline::finalise_stats(EvictionSetCollection& collection,
                                      GenerationScenario scenario) {
    GenerationStats& stats = collection.stats;
    stats.classes_total = cfg_.cache.classes_per_offset() *
                          (scenario == GenerationScenario::full_llc ? kLinesPerPage : 1);
    stats.found = collection.sets.size();

    std::set<std::pair<std::uint8_t, CongruenceClass>> covered;
    for (EvictionSet& s : collection.sets) {
        s.tag = ground_truth_class(s.addrs.front());
        if (!covered.emplace(s.offset_line, s.tag).second)
            ++stats.duplicates;
        if (s.via == EvictionSet::Via::mirror)
            ++stats.mirrored;
        else
            ++stats.conventional;
    }
    stats.missing = stats.classes_total - covered.size();
    stats.conventional_fraction =
        stats.found == 0 ? 0.0 : static_cast<double>(stats.conventional) / stats.found;

    stats.eviction_tests = hier_.counters().eviction_tests;
    stats.l2_eviction_tests = hier_.counters().l2_eviction_tests;
    stats.cache_accesses = hier_.counters().accesses;
    stats.gate_invocations = oracle_.counters().gate_invocations;
}

std::string collection_csv(const EvictionSetCollection& collection) {
    std::ostringstream os;
    os << "offset,predicted_slice,l2_set,ground_truth_slice,ground_truth_subslice,"
          "ground_truth_set,member_count,via\n";
    for (const EvictionSet& s : collection.sets) {
        os << static_cast<unsigned>(s.offset_line) << ',' << s.predicted_slice << ','
           << s.l2_set_id << ',' << s.tag.slice << ',' << s.tag.subslice << ',' << s.tag.set << ','
           << s.addrs.size() << ','
           << (s.via == EvictionSet::Via::mirror ? "mirror" : "conventional") << '\n';
    }
    return os.str();
}

} // namespace slicelab
