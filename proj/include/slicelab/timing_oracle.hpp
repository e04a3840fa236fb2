#pragma once

#include <cstdint>
#include <vector>

#include "slicelab/rng.hpp"
#include "slicelab/slice_function.hpp"

namespace slicelab {

/// Cores and LLC slices as stops on a bidirectional ring; the latency model
/// charges hop_ticks per minimum-direction hop.
///
/// The standard layout clusters the cores ahead of the slices so that every
/// core sees pairwise-distinct slice distances (a plain alternating layout
/// would make two slices equidistant from some cores and therefore
/// indistinguishable by any timing method). Real interconnects show richer
/// per-core asymmetries; only distance plus noise is modelled here.
struct RingTopology {
    std::uint32_t ring_size = 0;
    std::vector<std::uint32_t> core_pos;
    std::vector<std::uint32_t> slice_pos;

    static RingTopology standard(std::uint32_t cores, std::uint32_t slices);

    std::uint32_t hops(std::uint32_t core, std::uint32_t slice) const;
};

/// Latency model parameters, in abstract ticks. All values are model
/// constants, not measured data. noise_sigma is private per-access jitter;
/// drift_sigma is a common-mode term shared by every access inside one
/// measurement event (uncore frequency and load drift), which an absolute
/// timer sees in full while a same-instant race cancels it.
struct LatencyModel {
    double base_ticks = 40.0;
    double hop_ticks = 2.0;
    double noise_sigma = 1.5;
    double drift_sigma = 1.0;
    double outlier_cutoff = 100.0; // measurements above this resample

    static LatencyModel noise_free() { return {40.0, 2.0, 0.0, 0.0, 100.0}; }
    static LatencyModel quiet() { return {40.0, 2.0, 1.5, 1.0, 100.0}; }
    static LatencyModel busy() { return {40.0, 2.0, 6.0, 18.0, 1.0e12}; }
};

struct GateConfig {
    double delta_ticks = 0.0;      // comparator chain-setup compensation
    double delay_chain_unit = 1.0; // ticks per delay chain element
};

struct OracleCounters {
    std::uint64_t latency_samples = 0;
    std::uint64_t rdtscp_measurements = 0;
    std::uint64_t gate_invocations = 0;
};

/// Stochastic stand-in for the hardware timing primitives. Owns its RNG;
/// instances are independent and must not be shared across threads.
class TimingOracle {
public:
    TimingOracle(const LatencyModel& model, const RingTopology& topo, std::uint64_t seed)
        : model_(model), topo_(topo), rng_(seed) {}

    /// One access: base + hop * distance + private Gaussian noise.
    double sample_latency(std::uint32_t core, SliceIndex slice);

    /// Mean of `repeats` timer readings; readings above the outlier cutoff
    /// resample. Each reading carries its own common-mode drift.
    double rdtscp_measure(std::uint32_t core, SliceIndex slice, std::uint32_t repeats = 10);

    /// Race of one access against a fixed delay chain: true when the chain
    /// wins, i.e. the access outlasted chain_len * delay_chain_unit ticks.
    bool fixed_delay_gate(const GateConfig& gate, std::uint32_t core, SliceIndex slice,
                          std::uint32_t chain_len);

    /// Race of two same-instant accesses: true when the input access outlasts
    /// the compare access plus delta. Both racers share one drift draw, so
    /// common-mode variation cancels. Ties lose.
    bool comparator_gate(const GateConfig& gate, std::uint32_t core, SliceIndex input_slice,
                         SliceIndex compare_slice);

    const LatencyModel& model() const { return model_; }
    const RingTopology& topology() const { return topo_; }
    OracleCounters& counters() { return counters_; }

private:
    double latency_with_drift(std::uint32_t core, SliceIndex slice, double drift);

    LatencyModel model_;
    RingTopology topo_;
    Rng rng_;
    OracleCounters counters_;
};

} // namespace slicelab
