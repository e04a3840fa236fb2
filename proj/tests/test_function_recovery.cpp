#include <algorithm>

#include "doctest.h"
#include "slicelab/data_files.hpp"
#include "slicelab/errors.hpp"
#include "slicelab/function_recovery.hpp"

using namespace slicelab;

namespace {

BundledData& bundled() {
    static BundledData data = load_bundled_data(default_data_dir());
    return data;
}

} // namespace

TEST_CASE("recover_linear reproduces every bundled linear function bit for bit") {
    for (const char* name : {"linear-2", "linear-4", "linear-8"}) {
        const auto& spec = find_function(bundled().functions, name);
        SliceLookupOracle oracle(spec);
        auto recovered = recover_linear(oracle, spec.phys_bits);
        CHECK(recovered.masks == spec.masks);
        CHECK(recovered.slice_count == spec.slice_count);
        CHECK(equivalence_check(recovered, spec, 2000));
        // Base pair + one lookup per bit + spot checks.
        CHECK(oracle.lookups() <= 2ull * spec.phys_bits);
    }
}

TEST_CASE("recover_linear: constant single-slice oracle yields no masks") {
    auto spec = SliceFunctionSpec::linear("one", {}, 39);
    SliceLookupOracle oracle(spec);
    auto recovered = recover_linear(oracle, 39);
    CHECK(recovered.masks.empty());
    CHECK(recovered.slice_count == 1);
}

TEST_CASE("recover_linear rejects a non-linear oracle") {
    const auto& spec = find_function(bundled().functions, "nonlinear-6");
    SliceLookupOracle oracle(spec);
    try {
        (void)recover_linear(oracle, spec.phys_bits);
        FAIL("expected not_linear");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::not_linear);
    }
}

TEST_CASE("recover_nonlinear reproduces every bundled non-linear function exactly") {
    for (const char* name :
         {"nonlinear-6", "nonlinear-10", "nonlinear-12-gen13", "nonlinear-12-gen14"}) {
        const auto& spec = find_function(bundled().functions, name);
        SliceLookupOracle oracle(spec);
        auto recovered = recover_nonlinear(oracle, spec.phys_bits);
        CHECK(recovered.masks == spec.masks);
        CHECK(recovered.base_sequence == spec.base_sequence);
        CHECK(recovered.slice_count == spec.slice_count);
        CHECK(equivalence_check(recovered, spec, 2000));
        // No recovered mask touches the line offset bits.
        for (std::uint64_t m : recovered.masks)
            CHECK((m & 0x3f) == 0);
        // Lookup ceiling: sequence re-measurements plus one probe sequence per
        // address bit, all memoized.
        const std::uint64_t len = recovered.base_sequence.size();
        CHECK(oracle.lookups() <= (spec.phys_bits + 2) * len);
    }
}

TEST_CASE("recover_nonlinear on a zero mask keeps the zero column") {
    const auto& spec = find_function(bundled().functions, "nonlinear-12-gen13");
    SliceLookupOracle oracle(spec);
    auto recovered = recover_nonlinear(oracle, spec.phys_bits);
    // Mask 7 is all zero in the table convention; only its index term remains.
    CHECK(recovered.masks[7] == (1ull << 13));
    CHECK(table_masks(recovered)[7] == 0);
}

TEST_CASE("recover_nonlinear on a linear oracle finds the identity sequence") {
    const auto& spec = find_function(bundled().functions, "linear-4");
    SliceLookupOracle oracle(spec);
    auto recovered = recover_nonlinear(oracle, spec.phys_bits);
    CHECK(recovered.base_sequence == std::vector<SliceIndex>{0, 1, 2, 3});
    CHECK(equivalence_check(recovered, spec, 2000));
}

TEST_CASE("recover_nonlinear fails cleanly at the sequence length cap") {
    const auto& spec = find_function(bundled().functions, "nonlinear-6");
    SliceLookupOracle oracle(spec);
    RecoveryOptions opts;
    opts.max_sequence_len = 8; // the function needs 128
    try {
        (void)recover_nonlinear(oracle, spec.phys_bits, opts);
        FAIL("expected recovery_failure");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::recovery_failure);
    }
}

TEST_CASE("noisy oracle with majority voting still recovers exactly") {
    const auto& spec = find_function(bundled().functions, "linear-4");
    SliceLookupOracle oracle(spec, 0.02, 9, 1234);
    auto recovered = recover_linear(oracle, spec.phys_bits);
    CHECK(recovered.masks == spec.masks);
}

TEST_CASE("equivalence_check: identity, perturbation, phys_bits mismatch") {
    const auto& spec = find_function(bundled().functions, "nonlinear-10");
    CHECK(equivalence_check(spec, spec, 500));

    SliceFunctionSpec tweaked = spec;
    tweaked.masks[2] ^= 1ull << 27;
    CHECK_FALSE(equivalence_check(spec, tweaked, 500));

    SliceFunctionSpec narrow = spec;
    narrow.phys_bits = 38;
    CHECK_THROWS_AS((void)equivalence_check(spec, narrow, 10), Error);
}
