#include "slicelab/function_recovery.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <unordered_map>
#include <vector>

#include "slicelab/errors.hpp"

namespace slicelab {

SliceLookupOracle::SliceLookupOracle(SliceFunctionSpec spec, double error_rate,
                                     std::uint32_t majority_k, std::uint64_t seed)
    : spec_(std::move(spec)), error_rate_(error_rate), majority_k_(majority_k), rng_(seed) {
    spec_.validate();
    if (majority_k_ == 0)
        raise(Errc::config_error, "majority_k must be >= 1");
}

SliceIndex SliceLookupOracle::lookup(PhysAddr addr) {
    auto it = memo_.find(addr);
    if (it != memo_.end())
        return it->second;

    std::map<SliceIndex, std::uint32_t> votes;
    for (std::uint32_t k = 0; k < majority_k_; ++k) {
        ++lookups_;
        SliceIndex s = eval_slice(spec_, addr);
        if (error_rate_ > 0.0 && rng_.uniform01() < error_rate_) {
            // A wrong counter wins: report some other slice.
            s = static_cast<SliceIndex>((s + 1 + rng_.below(spec_.slice_count - 1)) %
                                        spec_.slice_count);
        }
        ++votes[s];
    }
    SliceIndex best = votes.begin()->first;
    std::uint32_t best_votes = 0;
    for (const auto& [slice, count] : votes) {
        if (count > best_votes) {
            best_votes = count;
            best = slice;
        }
    }
    memo_.emplace(addr, best);
    return best;
}

SliceFunctionSpec recover_linear(SliceLookupOracle& oracle, std::uint32_t phys_bits,
                                 const RecoveryOptions& opts) {
    const SliceIndex s0 = oracle.lookup(0);
    std::vector<std::uint64_t> masks;
    for (std::uint32_t b = kLineBits; b < phys_bits; ++b) {
        const SliceIndex s = s0 ^ oracle.lookup(1ull << b);
        for (std::uint32_t j = 0; s >> j; ++j)
            if ((s >> j) & 1) {
                if (masks.size() <= j)
                    masks.resize(j + 1, 0);
                masks[j] |= 1ull << b;
            }
    }

    SliceFunctionSpec recovered = SliceFunctionSpec::linear("recovered", masks, phys_bits);
    // Linearity spot check: random addresses must evaluate consistently.
    Rng rng(0x5b5f);
    for (std::uint32_t i = 0; i < opts.spot_checks; ++i) {
        const PhysAddr a = rng.next() & ((1ull << phys_bits) - 1);
        if (eval_slice(recovered, a) != oracle.lookup(a))
            raise(Errc::not_linear, "oracle behaviour is inconsistent with a linear function");
    }
    return recovered;
}

SliceFunctionSpec recover_nonlinear(SliceLookupOracle& oracle, std::uint32_t phys_bits,
                                    const RecoveryOptions& opts) {
    std::uint32_t len = 1;
    std::vector<SliceIndex> sequence{oracle.lookup(0)};
    std::vector<std::uint64_t> masks;

    auto remeasure = [&]() {
        sequence.resize(len);
        for (std::uint32_t i = 0; i < len; ++i)
            sequence[i] = oracle.lookup(static_cast<PhysAddr>(i) << kLineBits);
    };

    // A shorter sequence can alias: its prefix may match some permutation x
    // even though the bit really extends the index. Re-measuring after a
    // doubling therefore restarts the whole bit scan; memoized lookups make
    // the repeated probes free.
    for (bool settled = false; !settled;) {
        settled = true;
        masks.assign(0, 0);
        for (std::uint32_t bit = kLineBits; bit < phys_bits; ++bit) {
            const std::uint32_t consumed_bits = std::bit_width(len) - 1; // log2(len)
            if (bit < kLineBits + consumed_bits)
                continue; // part of the sequence index itself
            // Temporary sequence with the probed bit set.
            std::vector<SliceIndex> probe(len);
            for (std::uint32_t i = 0; i < len; ++i)
                probe[i] = oracle.lookup((static_cast<PhysAddr>(i) << kLineBits) ^ (1ull << bit));

            bool found = false;
            for (std::uint32_t x = 0; x < len && !found; ++x) {
                bool match = true;
                for (std::uint32_t i = 0; i < len && match; ++i)
                    match = probe[i] == sequence[i ^ x];
                if (match) {
                    for (std::uint32_t j = 0; x >> j; ++j)
                        if ((x >> j) & 1) {
                            if (masks.size() <= j)
                                masks.resize(j + 1, 0);
                            masks[j] |= 1ull << bit;
                        }
                    found = true;
                }
            }
            if (!found) {
                if (len >= opts.max_sequence_len)
                    raise(Errc::recovery_failure,
                          "no consistent XOR permutation at maximum sequence length");
                len *= 2;
                remeasure();
                settled = false;
                break;
            }
        }
    }

    // The sequence measurement consumed the low address bits as its index, so
    // the masks hold only the upper-bit terms (the table print convention).
    // Fold the index term back in for a self-contained spec.
    masks.resize(std::bit_width(len) - 1, 0);
    for (std::size_t j = 0; j < masks.size(); ++j)
        masks[j] |= 1ull << (kLineBits + j);
    const std::uint32_t slice_count =
        *std::max_element(sequence.begin(), sequence.end()) + 1;
    return SliceFunctionSpec::nonlinear("recovered", masks, sequence, slice_count, phys_bits);
}

bool equivalence_check(const SliceFunctionSpec& a, const SliceFunctionSpec& b,
                       std::uint32_t sample_budget, std::uint64_t seed) {
    if (a.phys_bits != b.phys_bits)
        raise(Errc::config_error, "equivalence_check: phys_bits differ");
    for (std::uint32_t bit = 0; bit < a.phys_bits; ++bit)
        if (eval_slice(a, 1ull << bit) != eval_slice(b, 1ull << bit))
            return false;
    Rng rng(seed);
    for (std::uint32_t i = 0; i < sample_budget; ++i) {
        const PhysAddr addr = rng.next() & ((1ull << a.phys_bits) - 1);
        if (eval_slice(a, addr) != eval_slice(b, addr))
            return false;
    }
    return true;
}

} // namespace slicelab
