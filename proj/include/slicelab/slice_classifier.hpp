#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "slicelab/slice_function.hpp"
#include "slicelab/timing_oracle.hpp"

namespace slicelab {

/// Race provider: runs one comparator-gate invocation between two opaque
/// targets and reports whether the input access lost the race (took longer).
/// Targets are physical addresses in the simulation pipeline and plain slice
/// labels in pure-oracle tests.
class RaceDriver {
public:
    virtual ~RaceDriver() = default;
    virtual bool race(std::uint64_t input, std::uint64_t compare) = 0;
};

/// Production driver: resolves each target to its slice (hidden hardware
/// state) and races through the timing oracle. Classification code only ever
/// sees race outcomes.
class OracleRaceDriver final : public RaceDriver {
public:
    OracleRaceDriver(TimingOracle& oracle, GateConfig gate, std::uint32_t core,
                     std::function<SliceIndex(std::uint64_t)> slice_of)
        : oracle_(oracle), gate_(gate), core_(core), slice_of_(std::move(slice_of)) {}

    bool race(std::uint64_t input, std::uint64_t compare) override {
        return oracle_.comparator_gate(gate_, core_, slice_of_(input), slice_of_(compare));
    }

private:
    TimingOracle& oracle_;
    GateConfig gate_;
    std::uint32_t core_;
    std::function<SliceIndex(std::uint64_t)> slice_of_;
};

/// One compare target per slice label. Labels are positions in `targets`; they
/// name distinct slices but may be a relabeling of the hardware indices, which
/// downstream code treats as opaque partition ids.
struct CompareSet {
    std::vector<std::uint64_t> targets;
    std::vector<std::uint8_t> offsets; // page line offsets, when page-derived

    std::size_t label_count() const { return targets.size(); }
};

/// Win-probability vectors, one row per input label, one column per compare
/// label.
struct ComparatorProfile {
    std::vector<std::vector<double>> rows;
    std::uint32_t reps = 0;

    std::size_t label_count() const { return rows.size(); }
};

struct ClassifierConfig {
    std::uint32_t predict_reps = 10;
    std::uint32_t profile_reps = 1000;
    double bayes_threshold = 0.90;
    double likelihood_cap = 0.85; // ceiling on single-observation confidence
    double posterior_floor = 1e-9;
    std::uint32_t tree_retry = 2;       // extra measurement attempts per node
    std::uint32_t offsets_per_node = 1; // decision-tree offsets per node
    std::uint32_t pairwise_reps = 20;   // per direction, compare-set discovery
    double compare_floor = 0.80;        // minimum pairwise pattern agreement
    std::uint32_t confusion_samples = 2000;

    /// Per-processor presets: non-linear functions measure two offsets per
    /// decision node.
    static ClassifierConfig for_spec(const SliceFunctionSpec& spec) {
        ClassifierConfig cfg;
        if (!spec.is_linear())
            cfg.offsets_per_node = 2;
        return cfg;
    }

    /// Preset additionally scaled to the latency model: pairwise compare-set
    /// discovery needs quadratically more repetitions as the per-access noise
    /// grows past the quiet level.
    static ClassifierConfig for_model(const SliceFunctionSpec& spec, const LatencyModel& model) {
        ClassifierConfig cfg = for_spec(spec);
        const double quiet = 1.5;
        if (model.noise_sigma > quiet) {
            const double scale = (model.noise_sigma / quiet) * (model.noise_sigma / quiet);
            cfg.pairwise_reps = static_cast<std::uint32_t>(cfg.pairwise_reps * scale);
        }
        return cfg;
    }
};

struct EntropyRow {
    std::vector<std::uint32_t> slice_counts;
    double entropy = 0.0;
};

/// Shannon entropy of the slice values a mapping subset takes at one offset;
/// empty subset is a config error.
EntropyRow offset_entropy(const PageSliceMappingTable& table, std::span<const std::size_t> subset,
                          unsigned offset, std::uint32_t slice_count);
EntropyRow offset_entropy(const PageSliceMappingTable& table, unsigned offset,
                          std::uint32_t slice_count);

using CalibrationTarget = std::pair<std::uint64_t, SliceIndex>; // target, label

/// Empirical win-frequency rows from racing labelled calibration targets
/// against every compare target. Labels without calibration targets fall back
/// to the compare target itself.
ComparatorProfile build_profile(RaceDriver& driver, const CompareSet& compare,
                                std::span<const CalibrationTarget> calibration,
                                std::uint32_t reps);

/// predict_reps races against each compare target, averaged into a
/// win-frequency vector.
std::vector<double> measure_win_vector(RaceDriver& driver, std::uint64_t target,
                                       const CompareSet& compare, std::uint32_t reps);

/// Label of the profile row closest (Euclidean) to the measured vector; ties
/// resolve to the lowest label.
SliceIndex predict_slice(RaceDriver& driver, std::uint64_t target, const ComparatorProfile& profile,
                         const CompareSet& compare, const ClassifierConfig& cfg);
SliceIndex nearest_profile_row(const ComparatorProfile& profile, std::span<const double> vec);

using PageTargets = std::array<std::uint64_t, kLinesPerPage>;

struct CompareSetResult {
    CompareSet compare;
    PageSliceMapping page_labels{};        // label per page offset, calibration source
    std::size_t matched_mapping = SIZE_MAX; // table index, non-linear discovery only
    double confidence = 1.0;
};

/// Finds one compare target per slice within a single page. Linear functions
/// use fixed offsets derived from the mask structure; non-linear functions
/// race all offset pairs and match the same-slice pattern against the mapping
/// table (several equivalent mappings may fit; the returned labels are then a
/// relabeling). Pattern agreement below cfg.compare_floor raises
/// Errc::ambiguous_compare_set.
CompareSetResult determine_compare_set(RaceDriver& driver, const PageTargets& page,
                                       const SliceFunctionSpec& spec,
                                       const PageSliceMappingTable& table,
                                       const ClassifierConfig& cfg);

/// 64 independent slice predictions.
PageSliceMapping classify_page_direct(RaceDriver& driver, const PageTargets& page,
                                      const ComparatorProfile& profile, const CompareSet& compare,
                                      const ClassifierConfig& cfg);

/// classify_page_direct followed by best-agreement table lookup.
MatchResult closest_match(RaceDriver& driver, const PageTargets& page,
                          const ComparatorProfile& profile, const CompareSet& compare,
                          const PageSliceMappingTable& table, const ClassifierConfig& cfg);

using ConfusionMatrix = std::vector<std::vector<double>>; // [true][predicted]

/// Monte Carlo self-calibration: draws synthetic measurement vectors from the
/// profile's win probabilities, classifies them, and tallies the confusion.
/// Rows are Laplace-smoothed and blended toward uniform so no single
/// observation claims more than cfg.likelihood_cap confidence.
ConfusionMatrix confusion_from_profile(const ComparatorProfile& profile,
                                       const ClassifierConfig& cfg, std::uint64_t seed);

ConfusionMatrix identity_confusion(std::size_t labels);

struct BayesResult {
    std::size_t mapping = 0;
    std::uint32_t offsets_measured = 0;
    std::uint32_t restarts = 0;
    std::vector<double> posterior;
};

using MeasureFn = std::function<SliceIndex(unsigned /*offset*/)>;

/// Sequential Bayesian identification of the page mapping: uniform prior,
/// per-offset posterior update through the confusion likelihood, stop once the
/// best mapping reaches cfg.bayes_threshold (or offsets run out). A collapsed
/// posterior restarts from the uniform prior and continues.
BayesResult bayesian_page(const MeasureFn& measure, const PageSliceMappingTable& table,
                          const ConfusionMatrix& likelihood, const ClassifierConfig& cfg);
BayesResult bayesian_page(RaceDriver& driver, const PageTargets& page,
                          const ComparatorProfile& profile, const CompareSet& compare,
                          const PageSliceMappingTable& table, const ConfusionMatrix& likelihood,
                          const ClassifierConfig& cfg);

struct DecisionTree {
    struct Node {
        std::vector<std::uint8_t> offsets; // measured together at this node
        std::vector<std::pair<std::vector<SliceIndex>, std::uint32_t>> children;
        std::int32_t leaf_mapping = -1; // valid when >= 0
        bool is_leaf() const { return leaf_mapping >= 0; }
    };

    std::vector<Node> nodes; // nodes[0] is the root (absent for empty table)
    std::uint32_t leaf_count = 0;
    std::uint32_t max_depth = 0; // counted in measured offsets on the path

    std::size_t leaf_for(std::span<const SliceIndex> root_path_keys) const;
};

/// Recursive maximum-entropy (ID3-style) construction: each node measures the
/// unused offsets with the highest entropy over its surviving mappings, one
/// child per observed value combination, leaves once a single mapping remains.
DecisionTree build_decision_tree(const PageSliceMappingTable& table, std::uint32_t slice_count,
                                 const ClassifierConfig& cfg);

struct TreeResult {
    std::size_t mapping = 0;
    std::uint32_t offsets_measured = 0;
};

/// Walks the tree with fresh measurements; a prediction with no matching child
/// re-measures the node up to cfg.tree_retry extra attempts and then
/// propagates the retry to the parent. Throws Errc::classification_failure
/// when the root runs out of attempts.
TreeResult classify_page_tree(const MeasureFn& measure, const DecisionTree& tree,
                              const ClassifierConfig& cfg);
TreeResult classify_page_tree(RaceDriver& driver, const PageTargets& page,
                              const ComparatorProfile& profile, const CompareSet& compare,
                              const DecisionTree& tree, const ClassifierConfig& cfg);

/// Timing-baseline classifiers (no comparator gate): nearest calibrated mean
/// and nearest calibrated delay-chain tipping point.
class LatencyProbe {
public:
    LatencyProbe(TimingOracle& oracle, GateConfig gate, std::uint32_t core,
                 std::function<SliceIndex(std::uint64_t)> slice_of)
        : oracle_(oracle), gate_(gate), core_(core), slice_of_(std::move(slice_of)) {}

    double measure_mean(std::uint64_t target, std::uint32_t reps);
    std::uint32_t measure_tipping(std::uint64_t target, std::uint32_t reps);

private:
    TimingOracle& oracle_;
    GateConfig gate_;
    std::uint32_t core_;
    std::function<SliceIndex(std::uint64_t)> slice_of_;
};

struct BaselineCalibration {
    std::vector<double> mean_per_label;
    std::vector<double> tipping_per_label;
};

BaselineCalibration calibrate_baselines(LatencyProbe& probe,
                                        std::span<const CalibrationTarget> calibration,
                                        std::uint32_t reps);

SliceIndex rdtscp_classify(LatencyProbe& probe, std::uint64_t target,
                           const BaselineCalibration& calib, std::uint32_t reps);
SliceIndex tipping_point_classify(LatencyProbe& probe, std::uint64_t target,
                                  const BaselineCalibration& calib, std::uint32_t reps);

PageSliceMapping rdtscp_classifier(LatencyProbe& probe, const PageTargets& page,
                                   const BaselineCalibration& calib, std::uint32_t reps);
PageSliceMapping tipping_point_classifier(LatencyProbe& probe, const PageTargets& page,
                                          const BaselineCalibration& calib, std::uint32_t reps);

} // namespace slicelab
