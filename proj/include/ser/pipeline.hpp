#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/cache.hpp"
#include "ser/config.hpp"
#include "ser/corpus.hpp"
#include "ser/evaluation.hpp"
#include "ser/features.hpp"
#include "ser/models.hpp"
#include "ser/svm.hpp"
#include "ser/training.hpp"

namespace ser {

struct PipelinePaths {
    fs::path out;

    explicit PipelinePaths(const ExperimentConfig& cfg) : out(cfg.output_dir) {
        if (const char* env = std::getenv("SER_CACHE_DIR"); env && *env)
            cache = fs::path(env);
        else if (!cfg.features.cache_dir.empty())
            cache = fs::path(cfg.features.cache_dir);
        else
            cache = out / "features";
    }

    fs::path manifest_file() const { return out / "manifest.tsv"; }
    fs::path normalized_dir() const { return out / "normalized"; }
    fs::path synth_dir() const { return out / "synth_audio"; }
    fs::path checkpoint_dir() const { return out / "checkpoint"; }
    fs::path report_dir() const { return out / "report"; }
    fs::path run_meta_file() const { return out / "run_meta.json"; }
    fs::path cache; // feature cache directory
};

namespace detail {

template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    const int count = std::min<int>(workers, static_cast<int>(n));
    threads.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline void update_run_meta(const fs::path& path, const nlohmann::json& patch) {
    nlohmann::json meta = nlohmann::json::object();
    if (fs::exists(path)) {
        try {
            meta = nlohmann::json::parse(read_file_bytes(path));
        } catch (const nlohmann::json::exception&) {
            meta = nlohmann::json::object();
        }
    }
    for (const auto& [k, v] : patch.items()) meta[k] = v;
    atomic_write_text(path, meta.dump(2) + "\n");
}

} // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct PrepareResult {
    CorpusManifest manifest; // fear-filtered
    std::size_t scanned = 0;
    std::size_t fear_removed = 0;
    std::vector<std::string> warnings;
};

// Normalized-audio cache entry names are content keys of the source path.
inline fs::path normalized_audio_path(const fs::path& dir, const std::string& source_path) {
    return dir / (to_hex(fnv1a64(source_path)) + ".f32");
}

inline void write_normalized_clip(const fs::path& dir, const AudioClip& clip) {
    const fs::path raw = normalized_audio_path(dir, clip.source_path);
    atomic_write_bytes(raw, clip.samples.data(), clip.samples.size() * sizeof(float));
    nlohmann::json side = {{"sample_rate", clip.sample_rate},
                           {"n_samples", clip.samples.size()},
                           {"label", clip.label},
                           {"speaker", clip.speaker_id},
                           {"source", clip.source_path}};
    atomic_write_text(raw.string() + ".json", side.dump(2) + "\n");
}

// Loads a clip from the normalized cache when present, otherwise decodes and
// normalizes the source file.
inline AudioClip load_clip(const ManifestEntry& entry, const PreprocessConfig& pre,
                           const fs::path& normalized_dir) {
    const fs::path raw = normalized_audio_path(normalized_dir, entry.path);
    if (fs::exists(raw)) {
        const std::string bytes = read_file_bytes(raw);
        AudioClip clip;
        clip.sample_rate = pre.target_sample_rate;
        clip.samples.resize(bytes.size() / sizeof(float));
        std::memcpy(clip.samples.data(), bytes.data(), bytes.size());
        clip.label = entry.label;
        clip.speaker_id = entry.speaker_id;
        clip.source_path = entry.path;
        clip.original_duration = entry.duration_seconds;
        if (clip.samples.size() == pre.params().target_samples()) return clip;
    }
    return load_and_normalize(entry, pre.params());
}

inline PrepareResult run_prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    const PipelinePaths paths(cfg);
    fs::create_directories(paths.out);

    PrepareResult result;
    CorpusManifest raw;
    if (cfg.corpus.synthetic) {
        raw = synth_corpus(paths.synth_dir(), cfg.corpus.synth_n_per_class,
                           cfg.corpus.synth_seed, cfg.preprocessing.target_sample_rate);
    } else if (!cfg.corpus.manifest.empty()) {
        raw = load_manifest(cfg.corpus.manifest);
    } else {
        ScanResult scan = scan_corpus(cfg.corpus.root,
                                      label_rule_from_string(cfg.corpus.label_rule));
        raw = std::move(scan.manifest);
        result.warnings = std::move(scan.warnings);
    }
    result.scanned = raw.entries.size();

    result.manifest = filter_fear(raw, &result.warnings);
    result.fear_removed = raw.entries.size() - result.manifest.entries.size();
    save_manifest(result.manifest, paths.manifest_file());

    if (cfg.preprocessing.cache_audio) {
        fs::create_directories(paths.normalized_dir());
        const auto& entries = result.manifest.entries;
        detail::parallel_for(entries.size(), cfg.workers, [&](std::size_t i) {
            const AudioClip clip = load_and_normalize(entries[i], cfg.preprocessing.params());
            write_normalized_clip(paths.normalized_dir(), clip);
        });
    }

    detail::update_run_meta(paths.run_meta_file(),
                            {{"resampler", SincResampler::kIdentity},
                             {"label_rule", cfg.corpus.label_rule},
                             {"target_sample_rate", cfg.preprocessing.target_sample_rate},
                             {"target_seconds", cfg.preprocessing.target_seconds},
                             {"entries", result.manifest.entries.size()},
                             {"fear_removed", result.fear_removed}});
    write_config_snapshot(cfg, paths.out / "config.snapshot");
    return result;
}

// ---------------------------------------------------------------------------
// extract

inline std::unique_ptr<FeatureExtractor> make_extractor(const ExperimentConfig& cfg) {
    if (cfg.extractor.kind == "synthetic")
        return std::make_unique<SyntheticExtractor>(cfg.extractor.synthetic_seed);
    return std::make_unique<PrecomputedExtractor>(cfg.extractor.artifact);
}

struct ExtractResult {
    std::size_t total = 0;
    std::size_t extracted = 0;
    std::size_t cache_hits = 0;
};

inline ExtractResult run_extract(const ExperimentConfig& cfg) {
    cfg.validate();
    const PipelinePaths paths(cfg);
    if (!fs::exists(paths.manifest_file()))
        throw DataError("manifest not found at " + paths.manifest_file().string() +
                        "; run prepare first");
    const CorpusManifest manifest = load_manifest(paths.manifest_file());
    auto extractor = make_extractor(cfg);
    FeatureCache cache(paths.cache);

    ExtractResult result;
    result.total = manifest.entries.size();
    std::atomic<std::size_t> extracted{0}, hits{0};
    detail::parallel_for(manifest.entries.size(), cfg.workers, [&](std::size_t i) {
        const auto& entry = manifest.entries[i];
        const std::string key = FeatureCache::key_for(
            {entry.path, extractor->extractor_id(), cfg.extractor.layer_index, "raw"});
        if (cache.has(key)) {
            hits.fetch_add(1);
            return;
        }
        const AudioClip clip = load_clip(entry, cfg.preprocessing, paths.normalized_dir());
        const FeatureMap map = extractor->extract(clip, cfg.extractor.layer_index);
        cache.put(map);
        extracted.fetch_add(1);
    });
    result.extracted = extracted.load();
    result.cache_hits = hits.load();

    nlohmann::json meta = {{"extractor_id", extractor->extractor_id()},
                           {"layer_index", cfg.extractor.layer_index},
                           {"feature_cache", paths.cache.string()}};
    if (auto* pre = dynamic_cast<PrecomputedExtractor*>(extractor.get()))
        meta["extractor_artifact_hash"] = pre->artifact_hash();
    detail::update_run_meta(paths.run_meta_file(), meta);
    return result;
}

// ---------------------------------------------------------------------------
// shared feature fetch

inline FeatureMap fetch_feature_map(const ManifestEntry& entry, const ExperimentConfig& cfg,
                                    const PipelinePaths& paths, FeatureExtractor& extractor,
                                    const FeatureCache& cache) {
    const std::string key = FeatureCache::key_for(
        {entry.path, extractor.extractor_id(), cfg.extractor.layer_index, "raw"});
    if (cache.has(key)) {
        FeatureMap map = cache.get_map(key);
        if (map.channels == extractor.channels()) return map;
    }
    const AudioClip clip = load_clip(entry, cfg.preprocessing, paths.normalized_dir());
    FeatureMap map = extractor.extract(clip, cfg.extractor.layer_index);
    cache.put(map);
    return map;
}

struct FamilyData {
    std::vector<int> y;                       // canonical codes
    NnDataset<float> nn;                      // proposed-cnn / transfer
    std::vector<std::vector<float>> vectors;  // svm
};

inline Tensor<float> map_to_input(const FeatureMap& map, int input_size, Interp interp) {
    const ResizedMap resized =
        resize_to_square(map, static_cast<std::size_t>(input_size), interp);
    Tensor<float> x(1, 1, input_size, input_size);
    std::copy(resized.values.begin(), resized.values.end(), x.data.begin());
    return x;
}

inline FamilyData build_family_data(const ExperimentConfig& cfg, const PipelinePaths& paths,
                                    const CorpusManifest& manifest,
                                    const std::vector<std::size_t>& indices,
                                    FeatureExtractor& extractor, const FeatureCache& cache) {
    FamilyData data;
    const Interp interp = interp_from_string(cfg.features.interpolation);
    data.y.resize(indices.size());
    if (cfg.model.family == "svm")
        data.vectors.resize(indices.size());
    else {
        data.nn.x.resize(indices.size());
        data.nn.y.resize(indices.size());
    }
    detail::parallel_for(indices.size(), cfg.workers, [&](std::size_t k) {
        const auto& entry = manifest.entries[indices[k]];
        const auto label = label_from_tag(entry.label);
        if (!label) throw DataError("non-target label '" + entry.label + "' in split");
        const FeatureMap map = fetch_feature_map(entry, cfg, paths, extractor, cache);
        data.y[k] = static_cast<int>(*label);
        if (cfg.model.family == "svm") {
            data.vectors[k] = mean_pool(map).values;
        } else {
            data.nn.x[k] = map_to_input(map, cfg.model.input_size, interp);
            data.nn.y[k] = static_cast<int>(*label);
        }
    });
    return data;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
    fs::path checkpoint_dir;
    TrainingHistory history;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
};

inline TrainSummary run_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const PipelinePaths paths(cfg);
    if (!fs::exists(paths.manifest_file()))
        throw DataError("manifest not found at " + paths.manifest_file().string() +
                        "; run prepare first");
    const CorpusManifest manifest = load_manifest(paths.manifest_file());
    const DataSplit split =
        make_split(manifest, cfg.split.ratios, cfg.split.seed, cfg.split.speaker_independent);

    auto extractor = make_extractor(cfg);
    FeatureCache cache(paths.cache);
    const FamilyData train_data =
        build_family_data(cfg, paths, manifest, split.train, *extractor, cache);
    const FamilyData val_data =
        build_family_data(cfg, paths, manifest, split.val, *extractor, cache);

    const fs::path ckpt_dir = paths.checkpoint_dir();
    fs::create_directories(ckpt_dir);

    TrainSummary summary;
    summary.checkpoint_dir = ckpt_dir;
    summary.train_size = train_data.y.size();
    summary.val_size = val_data.y.size();

    nlohmann::json extra = {{"extractor_id", extractor->extractor_id()},
                            {"layer_index", cfg.extractor.layer_index},
                            {"interpolation", cfg.features.interpolation}};
    if (auto* pre = dynamic_cast<PrecomputedExtractor*>(extractor.get()))
        extra["extractor_artifact_hash"] = pre->artifact_hash();

    if (cfg.model.family == "svm") {
        const SvmModel model = SvmModel::fit(train_data.vectors, train_data.y, cfg.model.svm);
        nlohmann::json manifest_json;
        std::string blob;
        model.to_checkpoint(manifest_json, blob);
        manifest_json["extra"] = extra;
        write_checkpoint_file(ckpt_dir / "best.ckpt", manifest_json, blob);
        write_checkpoint_file(ckpt_dir / "last.ckpt", manifest_json, blob);
        atomic_write_text(ckpt_dir / "history.jsonl", "");
    } else {
        NnModel<float> model =
            cfg.model.family == "proposed-cnn"
                ? build_proposed_cnn<float>(cfg.model.cnn_spec(), cfg.training.seed)
                : build_transfer<float>(cfg.model.transfer_spec(), cfg.training.seed);
        const TrainResult<float> result =
            train(model, train_data.nn, val_data.nn, cfg.training);
        summary.history = result.history;
        summary.best_epoch = result.best_epoch;
        summary.best_val_acc = result.best_val_acc;

        save_nn_checkpoint(model, ckpt_dir / "last.ckpt", extra);
        model.restore_params(result.best_params);
        save_nn_checkpoint(model, ckpt_dir / "best.ckpt", extra);
        atomic_write_text(ckpt_dir / "history.jsonl", result.history.to_jsonl());
    }
    write_config_snapshot(cfg, ckpt_dir / "config.snapshot");
    detail::update_run_meta(paths.run_meta_file(),
                            {{"model_family", cfg.model.family},
                             {"train_size", summary.train_size},
                             {"val_size", summary.val_size},
                             {"best_epoch", summary.best_epoch}});
    return summary;
}

// ---------------------------------------------------------------------------
// evaluate / predict / report

inline std::vector<std::vector<double>> model_probabilities(const LoadedModel& model,
                                                            const FamilyData& data,
                                                            int batch_size) {
    std::vector<std::vector<double>> probs;
    if (model.family == "svm") {
        probs = model.svm->predict_proba(data.vectors);
    } else {
        auto& nn = const_cast<NnModel<float>&>(*model.nn);
        probs.resize(data.nn.size());
        const int input = nn.input_size;
        for (std::size_t start = 0; start < data.nn.size();
             start += static_cast<std::size_t>(batch_size)) {
            const std::size_t b =
                std::min(static_cast<std::size_t>(batch_size), data.nn.size() - start);
            Tensor<float> batch(static_cast<int>(b), 1, input, input);
            for (std::size_t i = 0; i < b; ++i)
                std::copy(data.nn.x[start + i].data.begin(), data.nn.x[start + i].data.end(),
                          batch.sample(static_cast<int>(i)));
            auto batch_probs = nn.predict_proba(batch);
            for (std::size_t i = 0; i < b; ++i) {
                // Map model-space outputs onto canonical label codes.
                std::vector<double> canonical(kNumClasses, 0.0);
                for (int c = 0; c < nn.n_classes; ++c)
                    canonical[static_cast<std::size_t>(
                        nn.label_map[static_cast<std::size_t>(c)])] =
                        batch_probs[i][static_cast<std::size_t>(c)];
                probs[start + i] = std::move(canonical);
            }
        }
    }
    return probs;
}

struct EvaluateSummary {
    EvaluationReport report;
    EmittedReport emitted;
};

inline EvaluateSummary run_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                    const std::string& split_tag = "test") {
    cfg.validate();
    const PipelinePaths paths(cfg);
    if (!fs::exists(paths.manifest_file()))
        throw DataError("manifest not found at " + paths.manifest_file().string() +
                        "; run prepare first");
    const CorpusManifest manifest = load_manifest(paths.manifest_file());
    const DataSplit split =
        make_split(manifest, cfg.split.ratios, cfg.split.seed, cfg.split.speaker_independent);

    const std::vector<std::size_t>* indices = nullptr;
    if (split_tag == "test")
        indices = &split.test;
    else if (split_tag == "val")
        indices = &split.val;
    else if (split_tag == "train")
        indices = &split.train;
    else
        throw ConfigError("unknown split tag '" + split_tag + "' (expected train|val|test)");
    if (indices->empty()) throw DataError("cannot evaluate: split '" + split_tag + "' is empty");

    const LoadedModel model = load_any_checkpoint(checkpoint);
    auto extractor = make_extractor(cfg);
    FeatureCache cache(paths.cache);
    const FamilyData data =
        build_family_data(cfg, paths, manifest, *indices, *extractor, cache);

    const auto probs = model_probabilities(model, data, cfg.training.batch_size);

    EvaluateSummary out;
    out.report = evaluate_predictions(data.y, probs, split_tag);

    TrainingHistory history;
    const fs::path history_file = checkpoint.parent_path() / "history.jsonl";
    if (fs::exists(history_file))
        history = TrainingHistory::from_jsonl(read_file_bytes(history_file));
    out.emitted = emit_report(out.report, history, paths.report_dir());
    return out;
}

struct PredictResult {
    int code = 0;
    std::string label;
    std::vector<double> probs;
};

// Predicts a single audio file using the checkpoint directory's snapshot for
// preprocessing and extraction settings.
inline PredictResult run_predict(const fs::path& checkpoint_dir, const fs::path& audio_path) {
    const fs::path snapshot = checkpoint_dir / "config.snapshot";
    if (!fs::exists(snapshot))
        throw DataError("config.snapshot not found in " + checkpoint_dir.string());
    const ExperimentConfig cfg = load_config(snapshot);
    if (!fs::exists(audio_path)) throw DataError("audio file not found: " + audio_path.string());

    const LoadedModel model = load_any_checkpoint(checkpoint_dir / "best.ckpt");
    auto extractor = make_extractor(cfg);

    ManifestEntry entry;
    entry.path = fs::absolute(audio_path).string();
    entry.label = class_names()[0]; // placeholder; prediction ignores it
    entry.speaker_id = "unknown";
    const WavData wav = read_wav(audio_path);
    entry.duration_seconds = wav.duration_seconds();
    AudioClip clip = normalize_audio(wav.mono(), wav.sample_rate, cfg.preprocessing.params(),
                                     entry.path);
    clip.source_path = entry.path;

    const FeatureMap map = extractor->extract(clip, cfg.extractor.layer_index);

    FamilyData data;
    data.y = {0};
    if (model.family == "svm") {
        data.vectors = {mean_pool(map).values};
    } else {
        data.nn.x.push_back(
            map_to_input(map, cfg.model.input_size, interp_from_string(cfg.features.interpolation)));
        data.nn.y = {0};
    }
    const auto probs = model_probabilities(model, data, 1);

    PredictResult out;
    out.probs = probs[0];
    out.code = 0;
    for (int c = 1; c < kNumClasses; ++c)
        if (out.probs[static_cast<std::size_t>(c)] > out.probs[static_cast<std::size_t>(out.code)])
            out.code = c;
    out.label = class_names()[static_cast<std::size_t>(out.code)];
    return out;
}

// Rebuilds report artifacts from the stored history and metrics without
// re-running inference.
inline EmittedReport run_report(const ExperimentConfig& cfg) {
    const PipelinePaths paths(cfg);
    TrainingHistory history;
    const fs::path history_file = paths.checkpoint_dir() / "history.jsonl";
    if (fs::exists(history_file))
        history = TrainingHistory::from_jsonl(read_file_bytes(history_file));

    const fs::path metrics_file = paths.report_dir() / "metrics.json";
    if (!fs::exists(metrics_file)) {
        if (history.records.empty())
            throw DataError("nothing to report: no metrics.json and no history under " +
                            paths.out.string());
        EmittedReport out;
        const fs::path curves_csv = paths.report_dir() / "curves.csv";
        fs::create_directories(paths.report_dir());
        atomic_write_text(curves_csv, curves_to_csv(history));
        out.files.push_back(curves_csv);
        const fs::path curves_svg = paths.report_dir() / "curves.svg";
        atomic_write_text(curves_svg, curves_to_svg(history));
        out.files.push_back(curves_svg);
        return out;
    }

    const auto j = nlohmann::json::parse(read_file_bytes(metrics_file));
    EvaluationReport report;
    report.accuracy = j.at("accuracy").get<double>();
    report.weighted_f1 = j.at("weighted_f1").get<double>();
    report.weighted_recall = j.at("weighted_recall").get<double>();
    report.macro_f1 = j.at("macro_f1").get<double>();
    report.macro_recall = j.at("macro_recall").get<double>();
    report.n_samples = j.at("n_samples").get<std::int64_t>();
    report.split_tag = j.value("split", "");
    report.confusion = j.at("confusion").get<ConfusionMatrix>();
    for (const auto& c : j.at("per_class")) {
        ClassMetrics cm;
        cm.name = c.at("class").get<std::string>();
        cm.support = c.at("support").get<std::int64_t>();
        cm.precision = c.at("precision").get<double>();
        cm.recall = c.at("recall").get<double>();
        cm.f1 = c.at("f1").get<double>();
        report.per_class.push_back(std::move(cm));
    }
    if (j.contains("warnings"))
        report.warnings = j.at("warnings").get<std::vector<std::string>>();
    return emit_report(report, history, paths.report_dir());
}

} // namespace ser
