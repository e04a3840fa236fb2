#include "slicelab/slice_function.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "slicelab/errors.hpp"

namespace slicelab {

namespace {

constexpr std::uint64_t kLineOffsetMask = (1ull << kLineBits) - 1;

unsigned parity(std::uint64_t v) { return static_cast<unsigned>(std::popcount(v) & 1); }

} // namespace

void SliceFunctionSpec::validate() const {
    if (slice_count == 0)
        raise(Errc::config_error, name + ": slice_count must be positive");
    if (phys_bits < kPageBits || phys_bits > 64)
        raise(Errc::config_error, name + ": phys_bits out of range");
    if (masks.size() >= 32)
        raise(Errc::config_error, name + ": too many masks");
    for (std::uint64_t m : masks) {
        if (m & kLineOffsetMask)
            raise(Errc::config_error, name + ": mask uses line offset bits below bit 6");
        if (phys_bits < 64 && (m >> phys_bits) != 0)
            raise(Errc::config_error, name + ": mask exceeds phys_bits");
    }
    const std::size_t stage_values = std::size_t{1} << masks.size();
    if (kind == Kind::linear) {
        if (!base_sequence.empty())
            raise(Errc::config_error, name + ": linear spec with base sequence");
        if (slice_count != stage_values)
            raise(Errc::config_error, name + ": linear slice_count != 2^masks");
    } else {
        if (base_sequence.size() != stage_values)
            raise(Errc::config_error, name + ": base sequence length != 2^masks");
        for (SliceIndex s : base_sequence)
            if (s >= slice_count)
                raise(Errc::config_error, name + ": base sequence entry out of range");
    }
}

SliceFunctionSpec SliceFunctionSpec::linear(std::string name, std::vector<std::uint64_t> masks,
                                            std::uint32_t phys_bits) {
    SliceFunctionSpec spec;
    spec.name = std::move(name);
    spec.kind = Kind::linear;
    spec.masks = std::move(masks);
    spec.slice_count = 1u << spec.masks.size();
    spec.phys_bits = phys_bits;
    spec.validate();
    return spec;
}

SliceFunctionSpec SliceFunctionSpec::nonlinear(std::string name, std::vector<std::uint64_t> masks,
                                               std::vector<SliceIndex> base_sequence,
                                               std::uint32_t slice_count,
                                               std::uint32_t phys_bits) {
    SliceFunctionSpec spec;
    spec.name = std::move(name);
    spec.kind = Kind::nonlinear;
    spec.masks = std::move(masks);
    spec.base_sequence = std::move(base_sequence);
    spec.slice_count = slice_count;
    spec.phys_bits = phys_bits;
    spec.validate();
    return spec;
}

std::uint32_t xor_stage_index(const SliceFunctionSpec& spec, PhysAddr addr) {
    std::uint32_t idx = 0;
    for (std::size_t j = 0; j < spec.masks.size(); ++j)
        idx |= parity(addr & spec.masks[j]) << j;
    return idx;
}

SliceIndex eval_slice(const SliceFunctionSpec& spec, PhysAddr addr) {
    if (spec.phys_bits < 64 && (addr >> spec.phys_bits) != 0)
        raise(Errc::range_error, spec.name + ": address exceeds phys_bits");
    const std::uint32_t idx = xor_stage_index(spec, addr);
    return spec.is_linear() ? idx : spec.base_sequence[idx];
}

std::uint32_t offset_stage_index(const SliceFunctionSpec& spec, unsigned line) {
    return xor_stage_index(spec, static_cast<PhysAddr>(line) << kLineBits);
}

PageSliceMappingTable enumerate_page_mappings(const SliceFunctionSpec& spec) {
    spec.validate();

    std::array<std::uint32_t, kLinesPerPage> offset_idx{};
    for (unsigned line = 0; line < kLinesPerPage; ++line)
        offset_idx[line] = offset_stage_index(spec, line);

    // The XOR-stage contributions reachable through bits >= 12 form a linear
    // span; build a basis with a witness address per basis vector.
    struct BasisEntry {
        std::uint32_t value;
        PhysAddr witness;
    };
    std::vector<BasisEntry> basis;
    for (unsigned bit = kPageBits; bit < spec.phys_bits; ++bit) {
        std::uint32_t v = 0;
        for (std::size_t j = 0; j < spec.masks.size(); ++j)
            v |= ((spec.masks[j] >> bit) & 1u) << j;
        PhysAddr w = 1ull << bit;
        for (const BasisEntry& e : basis) {
            if (std::bit_width(v) == std::bit_width(e.value)) {
                v ^= e.value;
                w ^= e.witness;
            }
        }
        if (v != 0) {
            basis.push_back({v, w});
            std::sort(basis.begin(), basis.end(),
                      [](const BasisEntry& a, const BasisEntry& b) { return a.value > b.value; });
        }
    }

    const std::size_t span = std::size_t{1} << basis.size();
    std::vector<PageSliceMapping> mappings;
    std::vector<PhysAddr> witnesses;
    mappings.reserve(span);
    witnesses.reserve(span);
    for (std::size_t combo = 0; combo < span; ++combo) {
        std::uint32_t chi = 0;
        PhysAddr upper = 0;
        for (std::size_t k = 0; k < basis.size(); ++k) {
            if (combo & (std::size_t{1} << k)) {
                chi ^= basis[k].value;
                upper ^= basis[k].witness;
            }
        }
        PageSliceMapping mapping;
        for (unsigned line = 0; line < kLinesPerPage; ++line) {
            const std::uint32_t idx = offset_idx[line] ^ chi;
            mapping[line] = spec.is_linear() ? idx : spec.base_sequence[idx];
        }
        mappings.push_back(mapping);
        witnesses.push_back(upper);
    }

    // Deduplicate and order lexicographically by content.
    std::vector<std::size_t> order(mappings.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return mappings[a] < mappings[b];
    });

    PageSliceMappingTable table;
    for (std::size_t i : order) {
        if (!table.mappings.empty() && table.mappings.back() == mappings[i])
            continue;
        table.mappings.push_back(mappings[i]);
        table.witness_uppers.push_back(witnesses[i]);
    }
    return table;
}

MatchResult match_mapping(std::span<const ObservedOffset> observed,
                          const PageSliceMappingTable& table) {
    if (table.mappings.empty())
        raise(Errc::config_error, "match_mapping: empty mapping table");
    if (observed.empty())
        raise(Errc::config_error, "match_mapping: no observed offsets");

    MatchResult best{0, -1};
    for (std::size_t i = 0; i < table.mappings.size(); ++i) {
        int agree = 0;
        for (const ObservedOffset& obs : observed)
            if (table.mappings[i][obs.offset] == obs.slice)
                ++agree;
        if (agree > best.agreement) {
            best.index = i;
            best.agreement = agree;
        }
    }
    return best;
}

MatchResult match_mapping(const PageSliceMapping& observed, const PageSliceMappingTable& table) {
    std::array<ObservedOffset, kLinesPerPage> all{};
    for (unsigned line = 0; line < kLinesPerPage; ++line)
        all[line] = {static_cast<std::uint8_t>(line), observed[line]};
    return match_mapping(std::span<const ObservedOffset>(all), table);
}

} // namespace slicelab
