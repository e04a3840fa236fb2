#include <algorithm>
#include <set>
#include <unordered_set>

#include "doctest.h"
#include "slicelab/data_files.hpp"
#include "slicelab/errors.hpp"
#include "slicelab/eviction_sets.hpp"

using namespace slicelab;

namespace {

BundledData& bundled() {
    static BundledData data = load_bundled_data(default_data_dir());
    return data;
}

PipelineConfig noise_free_config(const char* cpu, std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.cache = find_config(bundled().configs, cpu);
    cfg.latency = LatencyModel::noise_free();
    cfg.classifier = ClassifierConfig::for_spec(cfg.cache.slice_spec);
    cfg.seed = seed;
    return cfg;
}

// Fresh pages landing in the target's congruence class at the given offset.
std::vector<VirtAddr> congruent_fresh(EvictionPipeline& p, const CongruenceClass& cls,
                                      std::uint8_t offset, std::size_t count) {
    std::vector<VirtAddr> out;
    while (out.size() < count) {
        VirtAddr v = p.space().alloc_page() + (static_cast<VirtAddr>(offset) << kLineBits);
        if (p.ground_truth_class(v) == cls)
            out.push_back(v);
    }
    return out;
}

bool is_minimal(EvictionPipeline& p, const EvictionSet& set) {
    VirtAddr probe = congruent_fresh(p, p.ground_truth_class(set.addrs.front()),
                                     set.offset_line, 1)[0];
    p.hierarchy().flush_all();
    if (!test_eviction(p.hierarchy(), p.space(), probe, set.addrs))
        return false;
    for (std::size_t drop = 0; drop < set.addrs.size(); ++drop) {
        std::vector<VirtAddr> reduced;
        for (std::size_t i = 0; i < set.addrs.size(); ++i)
            if (i != drop)
                reduced.push_back(set.addrs[i]);
        p.hierarchy().flush_all();
        if (test_eviction(p.hierarchy(), p.space(), probe, reduced))
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("generate_candidates: pool arithmetic and offset uniformity") {
    EvictionPipeline p(noise_free_config("i7-6700K", 3));
    auto c3 = p.generate_candidates(2);
    CHECK(c3.addrs.size() == 6144); // 3 x (8 MB / 4 KB)
    for (VirtAddr a : c3.addrs)
        CHECK(((a >> kLineBits) & (kLinesPerPage - 1)) == 2);

    auto c1 = p.generate_candidates(0, 1.0);
    CHECK(c1.addrs.size() == 2048);
}

TEST_CASE("build_l2_eviction_sets: sixteen minimal sets covering the offset") {
    EvictionPipeline p(noise_free_config("i7-6700K", 5));
    auto sets = p.build_l2_eviction_sets(0);
    REQUIRE(sets.size() == 16);
    std::set<std::uint32_t> l2_indices;
    for (const auto& s : sets) {
        CHECK(s.addrs.size() == 4);
        // Members share one L2 set in ground truth.
        std::set<std::uint32_t> idx;
        for (VirtAddr a : s.addrs)
            idx.insert(l2_set_index(p.config().cache, p.space().translate(a)));
        CHECK(idx.size() == 1);
        l2_indices.insert(*idx.begin());

        // A fresh address in the same L2 set is evicted; dropping any member
        // breaks that.
        VirtAddr probe = 0;
        do {
            probe = p.space().alloc_page();
        } while (l2_set_index(p.config().cache, p.space().translate(probe)) != *idx.begin());
        p.hierarchy().flush_all();
        CHECK(test_l2_eviction(p.hierarchy(), p.space(), probe, s.addrs));
        for (std::size_t drop = 0; drop < s.addrs.size(); ++drop) {
            std::vector<VirtAddr> reduced;
            for (std::size_t i = 0; i < s.addrs.size(); ++i)
                if (i != drop)
                    reduced.push_back(s.addrs[i]);
            p.hierarchy().flush_all();
            CHECK_FALSE(test_l2_eviction(p.hierarchy(), p.space(), probe, reduced));
        }
    }
    CHECK(l2_indices.size() == 16); // all reachable L2 sets, pairwise distinct
}

TEST_CASE("build_l2_eviction_sets: starved pool raises pool_exhausted") {
    PipelineConfig cfg = noise_free_config("i7-6700K", 7);
    cfg.size_factor = 0.005; // ten pages cannot reach 16 L2 sets
    EvictionPipeline p(cfg);
    CHECK_THROWS_AS((void)p.build_l2_eviction_sets(0), Error);
}

TEST_CASE("l2_filter: ~1/16 survive, target always survives its own filter") {
    EvictionPipeline p(noise_free_config("i7-6700K", 9));
    auto candidates = p.generate_candidates(0);
    auto l2_sets = p.build_l2_eviction_sets(0);
    VirtAddr target = candidates.addrs[17];

    auto filtered = p.l2_filter(candidates, target, l2_sets);
    CHECK(filtered.l2_filtered);
    // Binomial(6144, 1/16): mean 384, sigma 19.
    CHECK(filtered.addrs.size() > 384 - 3 * 19);
    CHECK(filtered.addrs.size() < 384 + 3 * 19);
    CHECK(std::find(filtered.addrs.begin(), filtered.addrs.end(), target) !=
          filtered.addrs.end());
    const std::uint32_t want = l2_set_index(p.config().cache, p.space().translate(target));
    for (VirtAddr a : filtered.addrs)
        CHECK(l2_set_index(p.config().cache, p.space().translate(a)) == want);

    CandidateSet empty;
    CHECK(p.l2_filter(empty, target, l2_sets).addrs.empty());
}

TEST_CASE("slice_filter: ~1/slice_count survive with exact labels") {
    EvictionPipeline p(noise_free_config("i7-6700K", 11));
    auto candidates = p.generate_candidates(0);
    VirtAddr target = candidates.addrs[3];
    auto filtered = p.slice_filter(candidates, target);
    CHECK(filtered.slice_filtered);
    // Binomial(6144, 1/4): mean 1536, sigma 34.
    CHECK(filtered.addrs.size() > 1536 - 3 * 34);
    CHECK(filtered.addrs.size() < 1536 + 3 * 34);
    // Noise-free labels group by ground-truth slice.
    const SliceIndex want = eval_slice(p.config().cache.slice_spec, p.space().translate(target));
    for (VirtAddr a : filtered.addrs)
        CHECK(eval_slice(p.config().cache.slice_spec, p.space().translate(a)) == want);

    // Composing both filters concentrates around N/(16*slices).
    auto both = p.slice_filter(p.l2_filter(candidates, target, p.build_l2_eviction_sets(0)),
                               target);
    CHECK(both.addrs.size() > 96 - 3 * 10);
    CHECK(both.addrs.size() < 96 + 3 * 10);
}

TEST_CASE("slice_filter is a no-op on a single-slice system") {
    CacheConfig toy;
    toy.name = "toy";
    toy.slice_spec = SliceFunctionSpec::linear("one", {}, 32);
    toy.l1_sets = 8;
    toy.l1_ways = 2;
    toy.l2_sets = 128;
    toy.l2_ways = 2;
    toy.llc_sets_per_slice = 256;
    toy.llc_ways = 4;
    toy.subslices_per_slice = 1;
    PipelineConfig cfg;
    cfg.cache = toy;
    cfg.latency = LatencyModel::noise_free();
    cfg.seed = 13;
    EvictionPipeline p(cfg);
    auto candidates = p.generate_candidates(0);
    auto filtered = p.slice_filter(candidates, candidates.addrs[0]);
    CHECK(filtered.addrs.size() == candidates.addrs.size()); // every label matches
}

TEST_CASE("group_test_reduce: recovers exactly the congruent members") {
    EvictionPipeline p(noise_free_config("i7-6700K", 15));
    VirtAddr target = p.space().alloc_page();
    CongruenceClass cls = p.ground_truth_class(target);
    auto congruent = congruent_fresh(p, cls, 0, p.config().cache.llc_ways);

    CandidateSet pool;
    pool.offset_line = 0;
    pool.addrs = congruent;
    for (int i = 0; i < 64; ++i) { // chaff in other classes
        VirtAddr v = p.space().alloc_page();
        if (!(p.ground_truth_class(v) == cls))
            pool.addrs.push_back(v);
    }

    auto set = p.group_test_reduce(pool, target);
    CHECK(set.addrs.size() == p.config().cache.llc_ways);
    CHECK(std::set<VirtAddr>(set.addrs.begin(), set.addrs.end()) ==
          std::set<VirtAddr>(congruent.begin(), congruent.end()));
    CHECK(is_minimal(p, set));

    // Already-minimal input comes back unchanged.
    CandidateSet minimal;
    minimal.offset_line = 0;
    minimal.addrs = congruent;
    auto same = p.group_test_reduce(minimal, target);
    CHECK(std::set<VirtAddr>(same.addrs.begin(), same.addrs.end()) ==
          std::set<VirtAddr>(congruent.begin(), congruent.end()));

    // A pool that cannot evict raises cannot_reduce.
    CandidateSet weak;
    weak.offset_line = 0;
    weak.addrs.assign(congruent.begin(), congruent.end() - 2);
    try {
        (void)p.group_test_reduce(weak, target);
        FAIL("expected cannot_reduce");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::cannot_reduce);
    }
}

TEST_CASE("group_test_reduce: robust against low eviction noise") {
    int successes = 0;
    const int runs = 100;
    for (int run = 0; run < runs; ++run) {
        PipelineConfig cfg = noise_free_config("i7-6700K", 1000 + run);
        cfg.cache.eviction_noise = 0.01;
        cfg.removal_votes = 3;
        cfg.verify_votes = 9;
        EvictionPipeline p(cfg);
        VirtAddr target = p.space().alloc_page();
        CongruenceClass cls = p.ground_truth_class(target);
        auto congruent = congruent_fresh(p, cls, 0, p.config().cache.llc_ways);
        CandidateSet pool;
        pool.offset_line = 0;
        pool.addrs = congruent;
        for (int i = 0; i < 48; ++i)
            pool.addrs.push_back(p.space().alloc_page());
        try {
            auto set = p.group_test_reduce(pool, target);
            bool correct = set.addrs.size() == p.config().cache.llc_ways;
            for (VirtAddr a : set.addrs)
                correct = correct && p.ground_truth_class(a) == cls;
            successes += correct ? 1 : 0;
        } catch (const Error&) {
        }
    }
    CHECK(successes >= 95);
}

TEST_CASE("propagate_linear: identity, single-class mirrors, mirror of mirror") {
    EvictionPipeline p(noise_free_config("i7-6700K", 17));
    VirtAddr target = p.space().alloc_page();
    CongruenceClass cls = p.ground_truth_class(target);
    auto congruent = congruent_fresh(p, cls, 0, p.config().cache.llc_ways);
    EvictionSet seed;
    seed.addrs = congruent;
    seed.offset_line = 0;
    seed.predicted_slice = 1;

    auto mirrors = p.propagate_linear(seed);
    REQUIRE(mirrors.size() == kLinesPerPage);
    CHECK(mirrors[0].addrs == seed.addrs); // delta 0 is the identity

    for (const auto& m : mirrors) {
        std::set<CongruenceClass> classes;
        for (VirtAddr a : m.addrs)
            classes.insert(p.ground_truth_class(a));
        CHECK(classes.size() == 1);
        p.hierarchy().flush_all();
        VirtAddr probe = congruent_fresh(p, *classes.begin(), m.offset_line, 1)[0];
        CHECK(test_eviction(p.hierarchy(), p.space(), probe, m.addrs));
    }

    auto twice = p.propagate_linear(mirrors[5]);
    CHECK(twice[9].addrs == mirrors[9].addrs); // mirror of mirror = direct mirror
}

TEST_CASE("propagate_nonlinear: mirrors single-slice, linear input flags nothing") {
    EvictionPipeline p(noise_free_config("i7-8700", 19));
    // Classify pages of a synthetic congruent set first.
    VirtAddr target = p.space().alloc_page();
    CongruenceClass cls = p.ground_truth_class(target);
    auto congruent = congruent_fresh(p, cls, 0, p.config().cache.llc_ways);
    EvictionSet seed;
    seed.addrs = congruent;
    seed.offset_line = 0;
    for (VirtAddr a : congruent)
        (void)p.classify_page(a);

    auto result = p.propagate_nonlinear(seed);
    CHECK(result.mirrors.size() + result.conventional_offsets.size() == kLinesPerPage - 1);
    for (const auto& m : result.mirrors) {
        std::set<SliceIndex> slices;
        for (VirtAddr a : m.addrs)
            slices.insert(eval_slice(p.config().cache.slice_spec, p.space().translate(a)));
        CHECK(slices.size() == 1);
        // Accepted without contention tests, yet evicts a fresh congruent
        // target.
        p.hierarchy().flush_all();
        VirtAddr probe = congruent_fresh(p, p.ground_truth_class(m.addrs.front()),
                                         m.offset_line, 1)[0];
        CHECK(test_eviction(p.hierarchy(), p.space(), probe, m.addrs));
    }

    // Linear functions never flag an offset.
    EvictionPipeline lin(noise_free_config("i7-6700K", 21));
    VirtAddr lt = lin.space().alloc_page();
    auto lc = congruent_fresh(lin, lin.ground_truth_class(lt), 0, lin.config().cache.llc_ways);
    EvictionSet lseed;
    lseed.addrs = lc;
    lseed.offset_line = 0;
    for (VirtAddr a : lc)
        (void)lin.classify_page(a);
    auto lres = lin.propagate_nonlinear(lseed);
    CHECK(lres.conventional_offsets.empty());
    CHECK(lres.conventional_fraction == 0.0);
}

TEST_CASE("propagate_nonlinear without classified pages raises missing_mapping") {
    EvictionPipeline p(noise_free_config("i7-8700", 23));
    EvictionSet seed;
    seed.addrs = {p.space().alloc_page()};
    seed.offset_line = 0;
    try {
        (void)p.propagate_nonlinear(seed);
        FAIL("expected missing_mapping");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::missing_mapping);
    }
}

TEST_CASE("page_offset generation covers all 128 classes on the i7-6700K") {
    EvictionPipeline p(noise_free_config("i7-6700K", 25));
    auto collection = p.generate(GenerationScenario::page_offset);
    const auto& stats = collection.stats;

    CHECK(stats.classes_total == 128);
    CHECK(stats.found >= 127);
    CHECK(stats.duplicates <= 1);
    CHECK(stats.missing <= 1);
    CHECK(stats.coverage() >= 0.99);

    std::set<CongruenceClass> classes;
    for (const auto& s : collection.sets) {
        CHECK(s.addrs.size() == p.config().cache.llc_ways);
        std::set<CongruenceClass> member_classes;
        for (VirtAddr a : s.addrs)
            member_classes.insert(p.ground_truth_class(a));
        CHECK(member_classes.size() == 1);
        classes.insert(*member_classes.begin());
    }
    CHECK(classes.size() >= 127);

    // Minimality spot check on a few sets.
    for (std::size_t i = 0; i < collection.sets.size(); i += 40)
        CHECK(is_minimal(p, collection.sets[i]));

    // test_eviction_filter narrows 128 sets to exactly two.
    int checked = 0;
    for (VirtAddr page : {collection.sets[0].addrs[0], collection.sets[40].addrs[2]}) {
        auto matches = p.test_eviction_filter(page, collection, 0);
        CHECK(matches.size() == 2);
        ++checked;
    }
    CHECK(checked == 2);

    // The collection dump carries the versioned columns.
    std::string csv = collection_csv(collection);
    CHECK(csv.starts_with("offset,predicted_slice,l2_set,ground_truth_slice,"
                          "ground_truth_subslice,ground_truth_set,member_count,via"));
}

TEST_CASE("single-slice toy config: generation equals the plain L2 path") {
    CacheConfig toy;
    toy.name = "toy";
    toy.slice_spec = SliceFunctionSpec::linear("one", {}, 32);
    toy.l1_sets = 8;
    toy.l1_ways = 2;
    toy.l2_sets = 128;
    toy.l2_ways = 2;
    toy.llc_sets_per_slice = 128;
    toy.llc_ways = 4;
    toy.subslices_per_slice = 1;

    PipelineConfig with;
    with.cache = toy;
    with.latency = LatencyModel::noise_free();
    with.seed = 27;
    PipelineConfig without = with;
    without.slice_filter_enabled = false;

    auto a = EvictionPipeline(with).generate(GenerationScenario::page_offset);
    auto b = EvictionPipeline(without).generate(GenerationScenario::page_offset);
    CHECK(a.stats.classes_total == 2); // 1 slice x 1 subslice x 128/64 sets
    CHECK(a.stats.found == b.stats.found);
    CHECK(a.stats.missing == b.stats.missing);
}

TEST_CASE("non-inclusive presets with more L2 ways than directory ways fail cleanly") {
    // Directory contention pre-empts L2 contention there; the pipeline reports
    // the unsupported geometry instead of searching forever.
    PipelineConfig cfg = noise_free_config("i9-14900K", 31);
    EvictionPipeline p(cfg);
    try {
        (void)p.build_l2_eviction_sets(0);
        FAIL("expected config_error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::config_error);
    }
}
