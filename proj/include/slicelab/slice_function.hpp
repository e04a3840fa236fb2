#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace slicelab {

inline constexpr unsigned kLineBits = 6;
inline constexpr unsigned kPageBits = 12;
inline constexpr unsigned kLinesPerPage = 1u << (kPageBits - kLineBits); // 64

using PhysAddr = std::uint64_t;
using VirtAddr = std::uint64_t;
using SliceIndex = std::uint32_t;

/// An LLC slice hash. Linear functions map each permutation mask to one slice
/// index bit: bit j of the slice is the parity of (addr & masks[j]). Non-linear
/// functions feed the same XOR stage into a lookup: the parities form an index
/// (masks[0] -> index bit 0, LSB first) into base_sequence, whose entries are
/// slice values in [0, slice_count).
///
/// Masks here are self-contained: the XOR stage is exactly
/// parity(addr & masks[j]) with no implicit terms. Data files printed in the
/// usual reverse-engineering table convention leave out the cache-line index
/// bits of non-linear functions; the loader folds those back in
/// (see data_files.hpp).
struct SliceFunctionSpec {
    enum class Kind { linear, nonlinear };

    std::string name;
    Kind kind = Kind::linear;
    std::uint32_t slice_count = 1;
    std::uint32_t phys_bits = 39;
    std::vector<std::uint64_t> masks;       // one per XOR-stage output bit
    std::vector<SliceIndex> base_sequence;  // empty for linear

    bool is_linear() const { return kind == Kind::linear; }

    /// Throws Errc::config_error when the invariants do not hold:
    /// linear specs have slice_count == 2^masks and no base sequence,
    /// non-linear specs have 2^masks base entries all below slice_count, and
    /// no mask may touch the line-offset bits [0, 6).
    void validate() const;

    static SliceFunctionSpec linear(std::string name, std::vector<std::uint64_t> masks,
                                    std::uint32_t phys_bits);
    static SliceFunctionSpec nonlinear(std::string name, std::vector<std::uint64_t> masks,
                                       std::vector<SliceIndex> base_sequence,
                                       std::uint32_t slice_count, std::uint32_t phys_bits);
};

/// Slice pattern of the 64 cache lines of one 4 KB page.
using PageSliceMapping = std::array<SliceIndex, kLinesPerPage>;

/// All page-slice mappings a function can realise, sorted lexicographically by
/// content so indices are stable. witness_uppers[i] is a physical address with
/// zero page offset whose page realises mappings[i].
struct PageSliceMappingTable {
    std::vector<PageSliceMapping> mappings;
    std::vector<PhysAddr> witness_uppers;

    std::size_t size() const { return mappings.size(); }
};

/// Output of the XOR stage: bit j = parity(addr & masks[j]).
std::uint32_t xor_stage_index(const SliceFunctionSpec& spec, PhysAddr addr);

/// Slice index for a physical address. Throws Errc::range_error when the
/// address has bits at or above spec.phys_bits.
SliceIndex eval_slice(const SliceFunctionSpec& spec, PhysAddr addr);

/// Enumerates every distinct page-slice mapping by sweeping the XOR-stage
/// contribution of the address bits >= 12 (a constant XOR term per page), not
/// by brute force over addresses.
PageSliceMappingTable enumerate_page_mappings(const SliceFunctionSpec& spec);

struct ObservedOffset {
    std::uint8_t offset; // cache line index within the page, [0, 64)
    SliceIndex slice;
};

struct MatchResult {
    std::size_t index;  // best-matching table entry; ties resolve to the lowest index
    int agreement;      // number of observed offsets that agree with it
};

MatchResult match_mapping(std::span<const ObservedOffset> observed,
                          const PageSliceMappingTable& table);
MatchResult match_mapping(const PageSliceMapping& observed, const PageSliceMappingTable& table);

/// XOR-stage value contributed by the in-page line offset alone (upper bits zero).
std::uint32_t offset_stage_index(const SliceFunctionSpec& spec, unsigned line);

} // namespace slicelab
