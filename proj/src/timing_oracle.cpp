#include "slicelab/timing_oracle.hpp"


#include "slicelab/errors.hpp"

namespace slicelab {

RingTopology RingTopology::standard(std::uint32_t cores, std::uint32_t slices) {
    RingTopology t;
    t.ring_size = 2 * (cores + slices) + 4;
    t.core_pos.resize(cores);
    t.slice_pos.resize(slices);
    for (std::uint32_t c = 0; c < cores; ++c)
        t.core_pos[c] = c;
    for (std::uint32_t s = 0; s < slices; ++s)
        t.slice_pos[s] = cores + 1 + s;
    return t;
}

std::uint32_t RingTopology::hops(std::uint32_t core, std::uint32_t slice) const {
    if (core >= core_pos.size() || slice >= slice_pos.size())
        raise(Errc::config_error, "ring topology: core or slice out of range");
    const std::uint32_t a = core_pos[core];
    const std::uint32_t b = slice_pos[slice];
    const std::uint32_t d = a > b ? a - b : b - a;
    return std::min(d, ring_size - d);
}

double TimingOracle::latency_with_drift(std::uint32_t core, SliceIndex slice, double drift) {
    ++counters_.latency_samples;
    const double mean = model_.base_ticks + model_.hop_ticks * topo_.hops(core, slice);
    return mean + drift + rng_.gaussian(0.0, model_.noise_sigma);
}

double TimingOracle::sample_latency(std::uint32_t core, SliceIndex slice) {
    return latency_with_drift(core, slice, 0.0);
}

double TimingOracle::rdtscp_measure(std::uint32_t core, SliceIndex slice, std::uint32_t repeats) {
    if (repeats == 0)
        raise(Errc::config_error, "rdtscp_measure: repeats must be >= 1");
    ++counters_.rdtscp_measurements;
    double sum = 0.0;
    for (std::uint32_t i = 0; i < repeats; ++i) {
        double v;
        int tries = 0;
        do {
            const double drift = rng_.gaussian(0.0, model_.drift_sigma);
            v = latency_with_drift(core, slice, drift);
        } while (v > model_.outlier_cutoff && ++tries < 64);
        sum += v;
    }
    return sum / repeats;
}

bool TimingOracle::fixed_delay_gate(const GateConfig& gate, std::uint32_t core, SliceIndex slice,
                                    std::uint32_t chain_len) {
    ++counters_.gate_invocations;
    // The chain counts core-clock ticks; the access rides the uncore and sees
    // the drift.
    const double drift = rng_.gaussian(0.0, model_.drift_sigma);
    return latency_with_drift(core, slice, drift) > chain_len * gate.delay_chain_unit;
}

bool TimingOracle::comparator_gate(const GateConfig& gate, std::uint32_t core,
                                   SliceIndex input_slice, SliceIndex compare_slice) {
    ++counters_.gate_invocations;
    const double drift = rng_.gaussian(0.0, model_.drift_sigma);
    const double in = latency_with_drift(core, input_slice, drift);
    const double cmp = latency_with_drift(core, compare_slice, drift);
    return in > cmp + gate.delta_ticks;
}

} // namespace slicelab
