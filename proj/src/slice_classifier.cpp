#include "slicelab/slice_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slicelab/errors.hpp"
#include "slicelab/rng.hpp"

namespace slicelab {

namespace {

double shannon_entropy(std::span<const std::uint32_t> counts, std::uint32_t total) {
    double h = 0.0;
    for (std::uint32_t c : counts) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log2(p);
    }
    return h;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

std::size_t nearest_index(std::span<const double> values, double v) {
    std::size_t best = 0;
    double best_d = std::abs(values[0] - v);
    for (std::size_t i = 1; i < values.size(); ++i) {
        double d = std::abs(values[i] - v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

} // namespace

EntropyRow offset_entropy(const PageSliceMappingTable& table, std::span<const std::size_t> subset,
                          unsigned offset, std::uint32_t slice_count) {
    if (subset.empty())
        raise(Errc::config_error, "offset_entropy: empty mapping subset");
    if (offset >= kLinesPerPage)
        raise(Errc::config_error, "offset_entropy: offset out of range");
    EntropyRow row;
    row.slice_counts.assign(slice_count, 0);
    for (std::size_t m : subset)
        ++row.slice_counts[table.mappings[m][offset]];
    row.entropy = shannon_entropy(row.slice_counts, static_cast<std::uint32_t>(subset.size()));
    return row;
}

EntropyRow offset_entropy(const PageSliceMappingTable& table, unsigned offset,
                          std::uint32_t slice_count) {
    std::vector<std::size_t> all(table.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return offset_entropy(table, all, offset, slice_count);
}

ComparatorProfile build_profile(RaceDriver& driver, const CompareSet& compare,
                                std::span<const CalibrationTarget> calibration,
                                std::uint32_t reps) {
    const std::size_t labels = compare.label_count();
    if (labels == 0)
        raise(Errc::config_error, "build_profile: empty compare set");
    if (reps == 0)
        raise(Errc::config_error, "build_profile: reps must be >= 1");

    std::vector<std::vector<std::uint64_t>> targets_for(labels);
    for (const auto& [target, label] : calibration)
        if (label < labels)
            targets_for[label].push_back(target);
    for (std::size_t l = 0; l < labels; ++l)
        if (targets_for[l].empty())
            targets_for[l].push_back(compare.targets[l]);

    ComparatorProfile profile;
    profile.reps = reps;
    profile.rows.assign(labels, std::vector<double>(labels, 0.0));
    for (std::size_t l = 0; l < labels; ++l) {
        for (std::size_t k = 0; k < labels; ++k) {
            std::uint32_t wins = 0;
            for (std::uint32_t r = 0; r < reps; ++r) {
                const std::uint64_t input = targets_for[l][r % targets_for[l].size()];
                wins += driver.race(input, compare.targets[k]) ? 1 : 0;
            }
            profile.rows[l][k] = static_cast<double>(wins) / reps;
        }
    }
    return profile;
}

std::vector<double> measure_win_vector(RaceDriver& driver, std::uint64_t target,
                                       const CompareSet& compare, std::uint32_t reps) {
    std::vector<double> vec(compare.label_count(), 0.0);
    for (std::size_t k = 0; k < compare.label_count(); ++k) {
        std::uint32_t wins = 0;
        for (std::uint32_t r = 0; r < reps; ++r)
            wins += driver.race(target, compare.targets[k]) ? 1 : 0;
        vec[k] = static_cast<double>(wins) / reps;
    }
    return vec;
}

SliceIndex nearest_profile_row(const ComparatorProfile& profile, std::span<const double> vec) {
    std::size_t best = 0;
    double best_d = squared_distance(profile.rows[0], vec);
    for (std::size_t l = 1; l < profile.label_count(); ++l) {
        double d = squared_distance(profile.rows[l], vec);
        if (d < best_d) {
            best_d = d;
            best = l;
        }
    }
    return static_cast<SliceIndex>(best);
}

SliceIndex predict_slice(RaceDriver& driver, std::uint64_t target, const ComparatorProfile& profile,
                         const CompareSet& compare, const ClassifierConfig& cfg) {
    if (profile.label_count() != compare.label_count())
        raise(Errc::config_error, "predict_slice: profile/compare size mismatch");
    return nearest_profile_row(profile,
                               measure_win_vector(driver, target, compare, cfg.predict_reps));
}

CompareSetResult determine_compare_set(RaceDriver& driver, const PageTargets& page,
                                       const SliceFunctionSpec& spec,
                                       const PageSliceMappingTable& table,
                                       const ClassifierConfig& cfg) {
    CompareSetResult result;
    const std::uint32_t slices = spec.slice_count;

    if (spec.is_linear()) {
        // Any page realises the offset-structure pattern XORed with a fixed
        // constant, so offsets with distinct stage values always land in
        // distinct slices.
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            result.page_labels[o] = offset_stage_index(spec, o);
    } else {
        // Measured same-slice relation over all offset pairs.
        bool same[kLinesPerPage][kLinesPerPage] = {};
        for (unsigned a = 0; a < kLinesPerPage; ++a) {
            for (unsigned b = a + 1; b < kLinesPerPage; ++b) {
                std::uint32_t wins_ab = 0;
                std::uint32_t wins_ba = 0;
                for (std::uint32_t r = 0; r < cfg.pairwise_reps; ++r) {
                    wins_ab += driver.race(page[a], page[b]) ? 1 : 0;
                    wins_ba += driver.race(page[b], page[a]) ? 1 : 0;
                }
                const double delta =
                    std::abs(static_cast<double>(wins_ab) - static_cast<double>(wins_ba)) /
                    cfg.pairwise_reps;
                // Same-slice pairs race to a draw; the threshold sits three
                // standard errors above that, capped for small rep counts.
                const double threshold =
                    std::min(0.5, 3.0 * std::sqrt(0.5 / cfg.pairwise_reps));
                same[a][b] = delta < threshold;
            }
        }
        if (table.mappings.empty())
            raise(Errc::config_error, "determine_compare_set: empty mapping table");
        std::size_t best = 0;
        std::uint32_t best_agree = 0;
        const std::uint32_t pair_count = kLinesPerPage * (kLinesPerPage - 1) / 2;
        for (std::size_t m = 0; m < table.size(); ++m) {
            std::uint32_t agree = 0;
            const PageSliceMapping& mapping = table.mappings[m];
            for (unsigned a = 0; a < kLinesPerPage; ++a)
                for (unsigned b = a + 1; b < kLinesPerPage; ++b)
                    agree += ((mapping[a] == mapping[b]) == same[a][b]) ? 1 : 0;
            if (agree > best_agree) {
                best_agree = agree;
                best = m;
            }
        }
        result.matched_mapping = best;
        result.confidence = static_cast<double>(best_agree) / pair_count;
        if (result.confidence < cfg.compare_floor)
            raise(Errc::ambiguous_compare_set,
                  "pairwise pattern agreement " + std::to_string(result.confidence) +
                      " below floor");
        result.page_labels = table.mappings[best];
    }

    result.compare.targets.assign(slices, 0);
    result.compare.offsets.assign(slices, 0);
    std::vector<bool> covered(slices, false);
    for (unsigned o = 0; o < kLinesPerPage; ++o) {
        const SliceIndex v = result.page_labels[o];
        if (v < slices && !covered[v]) {
            covered[v] = true;
            result.compare.targets[v] = page[o];
            result.compare.offsets[v] = static_cast<std::uint8_t>(o);
        }
    }
    if (!std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }))
        raise(Errc::ambiguous_compare_set, "page does not cover every slice");
    return result;
}

PageSliceMapping classify_page_direct(RaceDriver& driver, const PageTargets& page,
                                      const ComparatorProfile& profile, const CompareSet& compare,
                                      const ClassifierConfig& cfg) {
    PageSliceMapping out{};
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        out[o] = predict_slice(driver, page[o], profile, compare, cfg);
    return out;
}

MatchResult closest_match(RaceDriver& driver, const PageTargets& page,
                          const ComparatorProfile& profile, const CompareSet& compare,
                          const PageSliceMappingTable& table, const ClassifierConfig& cfg) {
    return match_mapping(classify_page_direct(driver, page, profile, compare, cfg), table);
}

ConfusionMatrix identity_confusion(std::size_t labels) {
    ConfusionMatrix m(labels, std::vector<double>(labels, 0.0));
    for (std::size_t i = 0; i < labels; ++i)
        m[i][i] = 1.0;
    return m;
}

ConfusionMatrix confusion_from_profile(const ComparatorProfile& profile,
                                       const ClassifierConfig& cfg, std::uint64_t seed) {
    const std::size_t labels = profile.label_count();
    Rng rng(seed);
    std::vector<std::vector<std::uint32_t>> counts(labels,
                                                   std::vector<std::uint32_t>(labels, 0));
    std::vector<double> vec(labels);
    for (std::size_t t = 0; t < labels; ++t) {
        for (std::uint32_t n = 0; n < cfg.confusion_samples; ++n) {
            for (std::size_t k = 0; k < labels; ++k) {
                std::uint32_t wins = 0;
                for (std::uint32_t r = 0; r < cfg.predict_reps; ++r)
                    wins += rng.uniform01() < profile.rows[t][k] ? 1 : 0;
                vec[k] = static_cast<double>(wins) / cfg.predict_reps;
            }
            ++counts[t][nearest_profile_row(profile, vec)];
        }
    }

    ConfusionMatrix c(labels, std::vector<double>(labels, 0.0));
    for (std::size_t t = 0; t < labels; ++t) {
        const double total = cfg.confusion_samples + labels; // Laplace smoothing
        for (std::size_t s = 0; s < labels; ++s)
            c[t][s] = (counts[t][s] + 1.0) / total;
        // Blend toward uniform so one observation cannot exceed the cap.
        if (labels > 1 && cfg.likelihood_cap < 1.0 && c[t][t] > cfg.likelihood_cap) {
            const double uniform = 1.0 / labels;
            const double lambda = (cfg.likelihood_cap - uniform) / (c[t][t] - uniform);
            for (std::size_t s = 0; s < labels; ++s)
                c[t][s] = lambda * c[t][s] + (1.0 - lambda) * uniform;
        }
    }
    return c;
}

BayesResult bayesian_page(const MeasureFn& measure, const PageSliceMappingTable& table,
                          const ConfusionMatrix& likelihood, const ClassifierConfig& cfg) {
    const std::size_t n = table.size();
    if (n == 0)
        raise(Errc::config_error, "bayesian_page: empty mapping table");

    BayesResult result;
    result.posterior.assign(n, 1.0 / n); // no prior information
    for (unsigned offset = 0; offset < kLinesPerPage; ++offset) {
        const double best = *std::max_element(result.posterior.begin(), result.posterior.end());
        if (best >= cfg.bayes_threshold)
            break;
        const SliceIndex predicted = measure(offset);
        ++result.offsets_measured;
        double sum = 0.0;
        for (std::size_t m = 0; m < n; ++m) {
            const SliceIndex truth = table.mappings[m][offset];
            result.posterior[m] *= likelihood[truth][predicted];
            sum += result.posterior[m];
        }
        if (sum <= 0.0) {
            // Contradictory observations wiped the posterior out; start over.
            result.posterior.assign(n, 1.0 / n);
            ++result.restarts;
            continue;
        }
        for (double& p : result.posterior)
            p = std::max(p / sum, cfg.posterior_floor);
        const double renorm = std::accumulate(result.posterior.begin(), result.posterior.end(), 0.0);
        for (double& p : result.posterior)
            p /= renorm;
    }
    result.mapping = static_cast<std::size_t>(
        std::max_element(result.posterior.begin(), result.posterior.end()) -
        result.posterior.begin());
    return result;
}

BayesResult bayesian_page(RaceDriver& driver, const PageTargets& page,
                          const ComparatorProfile& profile, const CompareSet& compare,
                          const PageSliceMappingTable& table, const ConfusionMatrix& likelihood,
                          const ClassifierConfig& cfg) {
    MeasureFn measure = [&](unsigned offset) {
        return predict_slice(driver, page[offset], profile, compare, cfg);
    };
    return bayesian_page(measure, table, likelihood, cfg);
}

namespace {

struct TreeBuilder {
    const PageSliceMappingTable& table;
    std::uint32_t slice_count;
    const ClassifierConfig& cfg;
    DecisionTree& tree;

    std::uint32_t build(std::vector<std::size_t> candidates, std::uint64_t used,
                        std::uint32_t depth) {
        const auto idx = static_cast<std::uint32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        if (candidates.size() == 1) {
            tree.nodes[idx].leaf_mapping = static_cast<std::int32_t>(candidates[0]);
            ++tree.leaf_count;
            tree.max_depth = std::max(tree.max_depth, depth);
            return idx;
        }

        // Highest-entropy unused offsets; ties go to the lowest offset.
        std::vector<std::pair<double, unsigned>> ranked;
        for (unsigned o = 0; o < kLinesPerPage; ++o) {
            if (used & (1ull << o))
                continue;
            const double h = offset_entropy(table, candidates, o, slice_count).entropy;
            if (h > 0.0)
                ranked.emplace_back(-h, o);
        }
        if (ranked.empty())
            raise(Errc::config_error, "build_decision_tree: indistinguishable mappings");
        std::sort(ranked.begin(), ranked.end());
        const std::size_t take = std::min<std::size_t>(cfg.offsets_per_node, ranked.size());

        std::vector<std::uint8_t> offsets;
        std::uint64_t child_used = used;
        for (std::size_t i = 0; i < take; ++i) {
            offsets.push_back(static_cast<std::uint8_t>(ranked[i].second));
            child_used |= 1ull << ranked[i].second;
        }

        std::vector<std::pair<std::vector<SliceIndex>, std::vector<std::size_t>>> groups;
        for (std::size_t m : candidates) {
            std::vector<SliceIndex> key;
            key.reserve(offsets.size());
            for (std::uint8_t o : offsets)
                key.push_back(table.mappings[m][o]);
            auto it = std::find_if(groups.begin(), groups.end(),
                                   [&](const auto& g) { return g.first == key; });
            if (it == groups.end())
                groups.emplace_back(std::move(key), std::vector<std::size_t>{m});
            else
                it->second.push_back(m);
        }

        tree.nodes[idx].offsets = offsets;
        const auto d = static_cast<std::uint32_t>(depth + offsets.size());
        for (auto& [key, members] : groups) {
            const std::uint32_t child = build(std::move(members), child_used, d);
            tree.nodes[idx].children.emplace_back(key, child);
        }
        return idx;
    }
};

} // namespace

DecisionTree build_decision_tree(const PageSliceMappingTable& table, std::uint32_t slice_count,
                                 const ClassifierConfig& cfg) {
    if (table.mappings.empty())
        raise(Errc::config_error, "build_decision_tree: empty mapping table");
    if (cfg.offsets_per_node == 0)
        raise(Errc::config_error, "build_decision_tree: offsets_per_node must be >= 1");
    DecisionTree tree;
    std::vector<std::size_t> all(table.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    TreeBuilder{table, slice_count, cfg, tree}.build(std::move(all), 0, 0);
    return tree;
}

std::size_t DecisionTree::leaf_for(std::span<const SliceIndex> root_path_keys) const {
    std::size_t node = 0;
    std::size_t consumed = 0;
    for (;;) {
        const Node& n = nodes[node];
        if (n.is_leaf())
            return static_cast<std::size_t>(n.leaf_mapping);
        if (consumed + n.offsets.size() > root_path_keys.size())
            return SIZE_MAX;
        std::vector<SliceIndex> key(root_path_keys.begin() + consumed,
                                    root_path_keys.begin() + consumed + n.offsets.size());
        consumed += n.offsets.size();
        auto it = std::find_if(n.children.begin(), n.children.end(),
                               [&](const auto& c) { return c.first == key; });
        if (it == n.children.end())
            return SIZE_MAX;
        node = it->second;
    }
}

namespace {

struct TreeWalker {
    const MeasureFn& measure;
    const DecisionTree& tree;
    const ClassifierConfig& cfg;
    std::uint32_t measured = 0;

    std::optional<std::size_t> walk(std::uint32_t node_idx) {
        const DecisionTree::Node& n = tree.nodes[node_idx];
        if (n.is_leaf())
            return static_cast<std::size_t>(n.leaf_mapping);
        for (std::uint32_t attempt = 0; attempt <= cfg.tree_retry; ++attempt) {
            std::vector<SliceIndex> key;
            key.reserve(n.offsets.size());
            for (std::uint8_t o : n.offsets)
                key.push_back(measure(o));
            measured += static_cast<std::uint32_t>(n.offsets.size());
            auto it = std::find_if(n.children.begin(), n.children.end(),
                                   [&](const auto& c) { return c.first == key; });
            if (it == n.children.end())
                continue; // prediction error surfaced here; re-measure
            if (auto leaf = walk(it->second))
                return leaf;
            // Child ran out of retries: treat as an error at this node too.
        }
        return std::nullopt;
    }
};

} // namespace

TreeResult classify_page_tree(const MeasureFn& measure, const DecisionTree& tree,
                              const ClassifierConfig& cfg) {
    if (tree.nodes.empty())
        raise(Errc::config_error, "classify_page_tree: empty tree");
    TreeWalker walker{measure, tree, cfg};
    auto leaf = walker.walk(0);
    if (!leaf)
        raise(Errc::classification_failure, "decision tree retries exhausted");
    return {*leaf, walker.measured};
}

TreeResult classify_page_tree(RaceDriver& driver, const PageTargets& page,
                              const ComparatorProfile& profile, const CompareSet& compare,
                              const DecisionTree& tree, const ClassifierConfig& cfg) {
    MeasureFn measure = [&](unsigned offset) {
        return predict_slice(driver, page[offset], profile, compare, cfg);
    };
    return classify_page_tree(measure, tree, cfg);
}

double LatencyProbe::measure_mean(std::uint64_t target, std::uint32_t reps) {
    return oracle_.rdtscp_measure(core_, slice_of_(target), reps);
}

std::uint32_t LatencyProbe::measure_tipping(std::uint64_t target, std::uint32_t reps) {
    const SliceIndex slice = slice_of_(target);
    auto chain_win_rate = [&](std::uint32_t len) {
        std::uint32_t chain_wins = 0;
        for (std::uint32_t r = 0; r < reps; ++r)
            chain_wins += oracle_.fixed_delay_gate(gate_, core_, slice, len) ? 0 : 1;
        return static_cast<double>(chain_wins) / reps;
    };
    // Smallest chain length whose win rate reaches one half.
    std::uint32_t hi = 1;
    while (chain_win_rate(hi) < 0.5) {
        hi *= 2;
        if (hi > (1u << 20))
            raise(Errc::config_error, "measure_tipping: no tipping point found");
    }
    std::uint32_t lo = 0;
    while (lo + 1 < hi) {
        const std::uint32_t mid = lo + (hi - lo) / 2;
        if (chain_win_rate(mid) >= 0.5)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

BaselineCalibration calibrate_baselines(LatencyProbe& probe,
                                        std::span<const CalibrationTarget> calibration,
                                        std::uint32_t reps) {
    std::size_t labels = 0;
    for (const auto& [target, label] : calibration)
        labels = std::max<std::size_t>(labels, label + 1);
    if (labels == 0)
        raise(Errc::config_error, "calibrate_baselines: no calibration targets");

    BaselineCalibration calib;
    calib.mean_per_label.assign(labels, 0.0);
    calib.tipping_per_label.assign(labels, 0.0);
    std::vector<std::uint32_t> counts(labels, 0);
    for (const auto& [target, label] : calibration) {
        calib.mean_per_label[label] += probe.measure_mean(target, reps);
        calib.tipping_per_label[label] += probe.measure_tipping(target, reps);
        ++counts[label];
    }
    for (std::size_t l = 0; l < labels; ++l) {
        if (counts[l] == 0)
            raise(Errc::config_error, "calibrate_baselines: label without targets");
        calib.mean_per_label[l] /= counts[l];
        calib.tipping_per_label[l] /= counts[l];
    }
    return calib;
}

SliceIndex rdtscp_classify(LatencyProbe& probe, std::uint64_t target,
                           const BaselineCalibration& calib, std::uint32_t reps) {
    return static_cast<SliceIndex>(
        nearest_index(calib.mean_per_label, probe.measure_mean(target, reps)));
}

SliceIndex tipping_point_classify(LatencyProbe& probe, std::uint64_t target,
                                  const BaselineCalibration& calib, std::uint32_t reps) {
    return static_cast<SliceIndex>(
        nearest_index(calib.tipping_per_label,
                      static_cast<double>(probe.measure_tipping(target, reps))));
}

PageSliceMapping rdtscp_classifier(LatencyProbe& probe, const PageTargets& page,
                                   const BaselineCalibration& calib, std::uint32_t reps) {
    PageSliceMapping out{};
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        out[o] = rdtscp_classify(probe, page[o], calib, reps);
    return out;
}

PageSliceMapping tipping_point_classifier(LatencyProbe& probe, const PageTargets& page,
                                          const BaselineCalibration& calib, std::uint32_t reps) {
    PageSliceMapping out{};
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        out[o] = tipping_point_classify(probe, page[o], calib, reps);
    return out;
}

} // namespace slicelab
