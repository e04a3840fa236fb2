#include "slicelab/experiments.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "slicelab/errors.hpp"
#include "slicelab/function_recovery.hpp"
#include "slicelab/slice_classifier.hpp"

namespace slicelab {

namespace {

using nlohmann::json;

void echo_config(const ExperimentConfig& cfg, json& report) {
    report["config"] = {{"cpu", cfg.cpu},       {"scenario", cfg.scenario},
                        {"seed", cfg.seed},     {"trials", cfg.trials},
                        {"out", cfg.out_dir},   {"full_llc", cfg.full_llc}};
}

void write_file(const ExperimentConfig& cfg, const std::string& name, const std::string& body) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream out(std::filesystem::path(cfg.out_dir) / name, std::ios::binary);
    if (!out)
        raise(Errc::config_error, "cannot write " + name + " in " + cfg.out_dir);
    out << body;
}

void write_report(const ExperimentConfig& cfg, json report) {
    report["schema"] = kReportSchema;
    echo_config(cfg, report);
    write_file(cfg, "report.json", report.dump(2) + "\n");
}

std::string csv_header(const std::string& name, const std::string& columns) {
    return "# schema: slicelab." + name + ".v1\n" + columns + "\n";
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string mapping_string(const PageSliceMapping& m) {
    std::string s;
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        s += "0123456789abcdef"[m[o] & 0xf];
    return s;
}

struct BenchSetup {
    CacheConfig cache;
    PageSliceMappingTable table;
    TimingOracle oracle;
    AddressSpace space;
    OracleRaceDriver driver;
    LatencyProbe probe;
    ClassifierConfig classifier;
    CompareSetResult compare;
    ComparatorProfile profile;
    ConfusionMatrix likelihood;
    DecisionTree tree;
    BaselineCalibration baselines;
    std::vector<SliceIndex> label_of_slice; // run relabeling, ground truth side

    BenchSetup(const CacheConfig& cache_cfg, const LatencyModel& model, std::uint64_t seed)
        : cache(cache_cfg),
          table(enumerate_page_mappings(cache.slice_spec)),
          oracle(model, RingTopology::standard(std::max(4u, cache.slice_count()),
                                               cache.slice_count()),
                 seed),
          space(cache.slice_spec.phys_bits, seed ^ 0x51ce),
          driver(oracle, GateConfig{}, 0,
                 [this](std::uint64_t p) { return eval_slice(cache.slice_spec, p); }),
          probe(oracle, GateConfig{}, 0,
                [this](std::uint64_t p) { return eval_slice(cache.slice_spec, p); }),
          classifier(ClassifierConfig::for_model(cache.slice_spec, model)) {
        const VirtAddr page = space.alloc_page();
        PageTargets targets{};
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            targets[o] = space.translate(page + (static_cast<VirtAddr>(o) << kLineBits));
        compare = determine_compare_set(driver, targets, cache.slice_spec, table, classifier);
        std::vector<CalibrationTarget> calibration;
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            calibration.emplace_back(targets[o], compare.page_labels[o]);
        profile = build_profile(driver, compare.compare, calibration, classifier.profile_reps);
        likelihood = confusion_from_profile(profile, classifier, seed ^ 0x11ce);
        tree = build_decision_tree(table, cache.slice_spec.slice_count, classifier);
        baselines = calibrate_baselines(probe, calibration, 100);

        label_of_slice.assign(cache.slice_count(), 0);
        for (std::size_t l = 0; l < compare.compare.targets.size(); ++l)
            label_of_slice[eval_slice(cache.slice_spec, compare.compare.targets[l])] =
                static_cast<SliceIndex>(l);
    }

    PageTargets page_targets(VirtAddr page) {
        PageTargets targets{};
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            targets[o] = space.translate(page + (static_cast<VirtAddr>(o) << kLineBits));
        return targets;
    }

    /// Run-relabelled ground truth pattern of a page (label space).
    PageSliceMapping true_labels(const PageTargets& targets) {
        PageSliceMapping truth{};
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            truth[o] = label_of_slice[eval_slice(cache.slice_spec, targets[o])];
        return truth;
    }
};

} // namespace

void ExperimentConfig::validate() const {
    if (!seed_set)
        raise(Errc::config_error, "a --seed value is required");
    if (scenario != "noisefree" && scenario != "quiet" && scenario != "busy")
        raise(Errc::config_error, "unknown scenario '" + scenario + "'");
}

LatencyModel scenario_model(const std::string& scenario) {
    if (scenario == "noisefree")
        return LatencyModel::noise_free();
    if (scenario == "quiet")
        return LatencyModel::quiet();
    if (scenario == "busy")
        return LatencyModel::busy();
    raise(Errc::config_error, "unknown scenario '" + scenario + "'");
}

LatencyModel resolved_model(const ExperimentConfig& cfg) {
    LatencyModel model = scenario_model(cfg.scenario);
    if (cfg.lat_base >= 0.0)
        model.base_ticks = cfg.lat_base;
    if (cfg.lat_hop >= 0.0)
        model.hop_ticks = cfg.lat_hop;
    if (cfg.lat_sigma >= 0.0)
        model.noise_sigma = cfg.lat_sigma;
    if (cfg.lat_drift >= 0.0)
        model.drift_sigma = cfg.lat_drift;
    return model;
}

json cmd_eval(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);

    std::ostringstream csv;
    csv << csv_header("eval", "address,xor_stage,slice");
    std::map<SliceIndex, std::uint64_t> histogram;
    for (std::uint64_t i = 0; i < cfg.count; ++i) {
        const PhysAddr a = cfg.addr + i * cfg.stride;
        const SliceIndex s = eval_slice(cache.slice_spec, a);
        ++histogram[s];
        char row[64];
        std::snprintf(row, sizeof row, "0x%llx,%u,%u\n", static_cast<unsigned long long>(a),
                      xor_stage_index(cache.slice_spec, a), s);
        csv << row;
        if (i < 16)
            std::printf("0x%-12llx -> slice %u\n", static_cast<unsigned long long>(a), s);
    }
    write_file(cfg, "eval.csv", csv.str());

    json report;
    report["command"] = "eval";
    for (const auto& [slice, count] : histogram)
        report["results"]["histogram"][std::to_string(slice)] = count;
    write_report(cfg, report);
    std::printf("%llu addresses evaluated (%s), %zu slices seen\n",
                static_cast<unsigned long long>(cfg.count), cache.slice_spec.name.c_str(),
                histogram.size());
    return report;
}

json cmd_mappings(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);
    auto table = enumerate_page_mappings(cache.slice_spec);

    std::ostringstream csv;
    csv << csv_header("mappings", "index,pattern,xor_to_first");
    for (std::size_t i = 0; i < table.size(); ++i) {
        const std::string pattern = mapping_string(table.mappings[i]);
        std::string xor_note = "-";
        if (cache.slice_spec.is_linear()) {
            const SliceIndex c = table.mappings[i][0] ^ table.mappings[0][0];
            bool uniform = true;
            for (unsigned o = 0; o < kLinesPerPage; ++o)
                uniform = uniform && (table.mappings[i][o] ^ table.mappings[0][o]) == c;
            if (uniform)
                xor_note = "0x" + std::string(1, "0123456789abcdef"[c & 0xf]);
        }
        csv << i << ',' << pattern << ',' << xor_note << '\n';
        if (table.size() <= 16 || i < 4)
            std::printf("mapping %3zu: %.32s... xor_to_first=%s\n", i, pattern.c_str(),
                        xor_note.c_str());
    }
    write_file(cfg, "mappings.csv", csv.str());

    json report;
    report["command"] = "mappings";
    report["results"]["mapping_count"] = table.size();
    write_report(cfg, report);
    std::printf("%zu distinct page-slice mappings for %s\n", table.size(),
                cache.slice_spec.name.c_str());
    return report;
}

json cmd_recover(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);
    const SliceFunctionSpec& spec = cache.slice_spec;

    SliceLookupOracle oracle(spec, 0.0, 1, cfg.seed);
    SliceFunctionSpec recovered = spec.is_linear() ? recover_linear(oracle, spec.phys_bits)
                                                   : recover_nonlinear(oracle, spec.phys_bits);

    std::ostringstream text;
    auto masks = table_masks(recovered);
    for (std::size_t j = 0; j < masks.size(); ++j)
        text << "m" << j << " = " << format_mask_hex(masks[j], recovered.phys_bits) << "\n";
    if (!recovered.is_linear())
        text << format_base_sequence(recovered) << "\n";
    std::fputs(text.str().c_str(), stdout);
    write_file(cfg, "recovered.txt", text.str());

    const bool identical =
        recovered.masks == spec.masks && recovered.base_sequence == spec.base_sequence;
    json report;
    report["command"] = "recover";
    report["results"]["lookups"] = oracle.lookups();
    report["results"]["bit_identical"] = identical;
    report["results"]["equivalent"] = equivalence_check(recovered, spec, 4096, cfg.seed);
    write_report(cfg, report);
    std::printf("recovered %s with %llu lookups (bit identical: %s)\n", spec.name.c_str(),
                static_cast<unsigned long long>(oracle.lookups()), identical ? "yes" : "no");
    return report;
}

json cmd_classify_bench(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);
    BenchSetup bench(cache, resolved_model(cfg), cfg.seed);
    const std::uint32_t trials = cfg.trials ? cfg.trials : 200;
    const std::uint32_t slices = cache.slice_count();

    // Per-offset slice predictions: comparator profile vs the two timing
    // baselines, and whole-page mapping identification per method.
    std::map<std::string, std::vector<std::uint64_t>> confusion; // [method] -> S*S counts
    for (const char* m : {"comparator", "rdtscp", "tipping"})
        confusion[m].assign(std::size_t{slices} * slices, 0);
    std::map<std::string, std::uint64_t> page_correct;
    std::map<std::string, std::uint64_t> offsets_measured;
    Rng trial_rng(cfg.seed ^ 0x7a1a);

    for (std::uint32_t t = 0; t < trials; ++t) {
        const VirtAddr page = bench.space.alloc_page();
        PageTargets targets = bench.page_targets(page);
        const PageSliceMapping truth = bench.true_labels(targets);
        const std::size_t truth_index = match_mapping(truth, bench.table).index;

        // Offset-level predictions over a few sampled offsets per page.
        for (unsigned k = 0; k < 4; ++k) {
            const unsigned o = static_cast<unsigned>(trial_rng.below(kLinesPerPage));
            const SliceIndex want = truth[o];
            SliceIndex got = predict_slice(bench.driver, targets[o], bench.profile,
                                           bench.compare.compare, bench.classifier);
            ++confusion["comparator"][std::size_t{want} * slices + got];
            got = rdtscp_classify(bench.probe, targets[o], bench.baselines, 10);
            ++confusion["rdtscp"][std::size_t{want} * slices + got];
            got = tipping_point_classify(bench.probe, targets[o], bench.baselines, 10);
            ++confusion["tipping"][std::size_t{want} * slices + got];
        }

        // Page-level methods.
        auto direct = classify_page_direct(bench.driver, targets, bench.profile,
                                           bench.compare.compare, bench.classifier);
        std::uint64_t direct_ok = 0;
        for (unsigned o = 0; o < kLinesPerPage; ++o)
            direct_ok += direct[o] == truth[o] ? 1 : 0;
        page_correct["comparator_offsets"] += direct_ok;

        page_correct["closest_match"] +=
            match_mapping(direct, bench.table).index == truth_index ? 1 : 0;

        auto bayes = bayesian_page(bench.driver, targets, bench.profile, bench.compare.compare,
                                   bench.table, bench.likelihood, bench.classifier);
        page_correct["bayesian"] += bayes.mapping == truth_index ? 1 : 0;
        offsets_measured["bayesian"] += bayes.offsets_measured;

        try {
            auto walked = classify_page_tree(bench.driver, targets, bench.profile,
                                             bench.compare.compare, bench.tree, bench.classifier);
            page_correct["tree"] += walked.mapping == truth_index ? 1 : 0;
            offsets_measured["tree"] += walked.offsets_measured;
        } catch (const Error& e) {
            if (e.code() != Errc::classification_failure)
                throw;
            offsets_measured["tree"] += kLinesPerPage;
        }
    }

    std::ostringstream conf_csv;
    conf_csv << csv_header("confusion", "method,scenario,slice_true,slice_pred,count");
    for (const auto& [method, counts] : confusion)
        for (std::uint32_t a = 0; a < slices; ++a)
            for (std::uint32_t b = 0; b < slices; ++b)
                conf_csv << method << ',' << cfg.scenario << ',' << a << ',' << b << ','
                         << counts[std::size_t{a} * slices + b] << '\n';
    write_file(cfg, "confusion.csv", conf_csv.str());

    auto diag_accuracy = [&](const char* method) {
        std::uint64_t diag = 0, total = 0;
        for (std::uint32_t a = 0; a < slices; ++a)
            for (std::uint32_t b = 0; b < slices; ++b) {
                total += confusion[method][std::size_t{a} * slices + b];
                if (a == b)
                    diag += confusion[method][std::size_t{a} * slices + b];
            }
        return total == 0 ? 0.0 : static_cast<double>(diag) / total;
    };

    json results;
    std::ostringstream acc_csv;
    acc_csv << csv_header("accuracy", "method,scenario,metric,value");
    auto emit = [&](const std::string& method, const std::string& metric, double value) {
        acc_csv << method << ',' << cfg.scenario << ',' << metric << ',' << fmt(value) << '\n';
        results[method][metric] = value;
    };
    emit("comparator", "offset_accuracy", diag_accuracy("comparator"));
    emit("rdtscp", "offset_accuracy", diag_accuracy("rdtscp"));
    emit("tipping", "offset_accuracy", diag_accuracy("tipping"));
    emit("comparator", "page_offset_accuracy",
         static_cast<double>(page_correct["comparator_offsets"]) / (64.0 * trials));
    emit("closest_match", "page_accuracy",
         static_cast<double>(page_correct["closest_match"]) / trials);
    emit("bayesian", "page_accuracy", static_cast<double>(page_correct["bayesian"]) / trials);
    emit("bayesian", "offsets_per_page",
         static_cast<double>(offsets_measured["bayesian"]) / trials);
    emit("tree", "page_accuracy", static_cast<double>(page_correct["tree"]) / trials);
    emit("tree", "offsets_per_page", static_cast<double>(offsets_measured["tree"]) / trials);
    write_file(cfg, "accuracy.csv", acc_csv.str());
    write_file(cfg, "plot_confusion.gp",
               "# gnuplot script for the confusion matrix heat maps\n"
               "set datafile separator ','\n"
               "set view map\n"
               "set xlabel 'predicted slice'\n"
               "set ylabel 'true slice'\n"
               "do for [m in 'comparator rdtscp tipping'] {\n"
               "  set title m . ' (" + cfg.scenario + ")'\n"
               "  splot 'confusion.csv' using 4:3:($1 eq m ? $5 : NaN) with points "
               "pointtype 5 pointsize 4 palette notitle\n"
               "  pause -1\n"
               "}\n");

    json report;
    report["command"] = "classify-bench";
    report["results"] = results;
    report["results"]["trials"] = trials;
    write_report(cfg, report);
    std::printf("classify-bench (%s, %s, %u pages): comparator %.3f, rdtscp %.3f, tipping %.3f\n",
                cfg.cpu.c_str(), cfg.scenario.c_str(), trials,
                diag_accuracy("comparator"), diag_accuracy("rdtscp"), diag_accuracy("tipping"));
    return report;
}

namespace {

PipelineConfig pipeline_config(const CacheConfig& cache, const ExperimentConfig& cfg) {
    PipelineConfig pc;
    pc.cache = cache;
    pc.latency = resolved_model(cfg);
    pc.classifier = ClassifierConfig::for_model(cache.slice_spec, pc.latency);
    pc.seed = cfg.seed;
    return pc;
}

json stats_json(const GenerationStats& stats) {
    return {{"classes_total", stats.classes_total},
            {"found", stats.found},
            {"duplicates", stats.duplicates},
            {"missing", stats.missing},
            {"coverage", stats.coverage()},
            {"conventional", stats.conventional},
            {"mirrored", stats.mirrored},
            {"failed_builds", stats.failed_builds},
            {"conventional_fraction", stats.conventional_fraction},
            {"eviction_tests", stats.eviction_tests},
            {"l2_eviction_tests", stats.l2_eviction_tests},
            {"cache_accesses", stats.cache_accesses},
            {"gate_invocations", stats.gate_invocations}};
}

} // namespace

json cmd_evict_bench(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);

    EvictionPipeline pipeline(pipeline_config(cache, cfg));
    auto collection = pipeline.generate(cfg.full_llc ? GenerationScenario::full_llc
                                                     : GenerationScenario::page_offset);
    write_file(cfg, "evsets.csv", "# schema: slicelab.evsets.v1\n" + collection_csv(collection));

    json report;
    report["command"] = "evict-bench";
    report["results"] = stats_json(collection.stats);
    write_report(cfg, report);
    const auto& s = collection.stats;
    std::printf("evict-bench (%s, %s): found %llu/%llu, dup %llu, missing %llu, "
                "conventional %.1f%%\n",
                cfg.cpu.c_str(), cfg.full_llc ? "full-llc" : "page-offset",
                static_cast<unsigned long long>(s.found),
                static_cast<unsigned long long>(s.classes_total),
                static_cast<unsigned long long>(s.duplicates),
                static_cast<unsigned long long>(s.missing), 100.0 * s.conventional_fraction);
    return report;
}

json cmd_propagate_stats(const ExperimentConfig& cfg) {
    cfg.validate();
    auto data = load_bundled_data(cfg.data());
    const CacheConfig& cache = find_config(data.configs, cfg.cpu);

    ExperimentConfig full = cfg;
    full.full_llc = true;
    EvictionPipeline pipeline(pipeline_config(cache, full));
    auto collection = pipeline.generate(GenerationScenario::full_llc);

    std::vector<std::uint64_t> conventional_per_offset(kLinesPerPage, 0);
    std::vector<std::uint64_t> mirrored_per_offset(kLinesPerPage, 0);
    for (const auto& s : collection.sets)
        (s.via == EvictionSet::Via::mirror ? mirrored_per_offset
                                           : conventional_per_offset)[s.offset_line] += 1;

    std::ostringstream csv;
    csv << csv_header("propagation", "offset,conventional,mirrored");
    for (unsigned o = 0; o < kLinesPerPage; ++o)
        csv << o << ',' << conventional_per_offset[o] << ',' << mirrored_per_offset[o] << '\n';
    write_file(cfg, "propagation.csv", csv.str());

    json report;
    report["command"] = "propagate-stats";
    report["results"] = stats_json(collection.stats);
    write_report(cfg, report);
    std::printf("propagate-stats (%s): conventional fraction %.4f over %llu sets\n",
                cfg.cpu.c_str(), collection.stats.conventional_fraction,
                static_cast<unsigned long long>(collection.stats.found));
    return report;
}

} // namespace slicelab
