#pragma once

#include <cstdint>
#include <unordered_map>

#include "slicelab/rng.hpp"
#include "slicelab/slice_function.hpp"

namespace slicelab {

/// Slice lookup backed by a ground-truth function, standing in for the
/// flush-and-count-events probe. An optional per-query error rate models a
/// misattributed lookup; majority_k repeats each query and takes the majority.
/// Query results are memoized after majority voting, so re-measuring a longer
/// sequence prefix reuses earlier answers.
class SliceLookupOracle {
public:
    SliceLookupOracle(SliceFunctionSpec spec, double error_rate = 0.0, std::uint32_t majority_k = 1,
                      std::uint64_t seed = 1);

    SliceIndex lookup(PhysAddr addr);

    std::uint64_t lookups() const { return lookups_; }
    std::uint32_t phys_bits() const { return spec_.phys_bits; }
    std::uint32_t slice_count() const { return spec_.slice_count; }

private:
    SliceFunctionSpec spec_;
    double error_rate_;
    std::uint32_t majority_k_;
    Rng rng_;
    std::uint64_t lookups_ = 0;
    std::unordered_map<std::uint64_t, SliceIndex> memo_;
};

struct RecoveryOptions {
    std::uint32_t max_sequence_len = 4096;
    std::uint32_t spot_checks = 16; // linearity verification samples
};

/// Reconstructs the permutation masks of a linear function bit by bit: for
/// each address bit b, the XOR of the slices of 0 and 1<<b names the mask
/// bits to set. A spot check against the oracle rejects non-linear behaviour
/// with Errc::not_linear.
SliceFunctionSpec recover_linear(SliceLookupOracle& oracle, std::uint32_t phys_bits,
                                 const RecoveryOptions& opts = {});

/// Joint recovery of masks and base sequence: starting from a length-1
/// sequence guess, each address bit either matches some XOR permutation x of
/// the current sequence (whose bits extend the masks) or doubles the guessed
/// length; the sequence is re-measured at cache-line strides and the bit
/// retried. Fails with Errc::recovery_failure at max_sequence_len.
SliceFunctionSpec recover_nonlinear(SliceLookupOracle& oracle, std::uint32_t phys_bits,
                                    const RecoveryOptions& opts = {});

/// Behavioural equality on all single-bit addresses plus sample_budget random
/// addresses (exact for linear functions, high confidence otherwise).
bool equivalence_check(const SliceFunctionSpec& a, const SliceFunctionSpec& b,
                       std::uint32_t sample_budget, std::uint64_t seed = 99);

} // namespace slicelab
