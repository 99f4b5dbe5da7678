#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "ser/corpus.hpp"
#include "ser/errors.hpp"
#include "ser/features.hpp"
#include "ser/models.hpp"
#include "ser/training.hpp"
#include "ser/util.hpp"

namespace ser {

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
}

} // namespace detail

struct CorpusConfig {
    std::string root;       // directory to scan
    std::string manifest;   // pre-built manifest file (skips scanning)
    std::string label_rule = "shemo";
    bool synthetic = false;
    int synth_n_per_class = 10;
    std::uint64_t synth_seed = 7;
};

struct PreprocessConfig {
    int target_sample_rate = 16000;
    double target_seconds = 7.0;
    bool cache_audio = true;

    NormalizeParams params() const { return {target_sample_rate, target_seconds}; }
};

struct ExtractorConfig {
    std::string kind = "synthetic"; // synthetic | reference
    std::string artifact;           // reference: precomputed-feature artifact dir
    int layer_index = 0;
    std::uint64_t synthetic_seed = 42;
};

struct FeaturesConfig {
    std::string interpolation = "bilinear"; // bilinear | nearest
    std::string cache_dir;                  // default: <output_dir>/features
};

struct ModelConfig {
    std::string family = "proposed-cnn"; // proposed-cnn | transfer | svm
    int input_size = 300;
    int width_divisor = 1; // proposed-cnn width reduction for hermetic runs
    SvmSpec svm;
    std::string transfer_scale = "b3";
    std::string transfer_backbone_artifact;
    int transfer_head_dim = 64;

    CnnSpec cnn_spec() const {
        CnnSpec spec = CnnSpec::scaled(width_divisor, input_size);
        return spec;
    }
    TransferSpec transfer_spec() const {
        TransferSpec spec;
        spec.scale = transfer_scale;
        spec.backbone_artifact = transfer_backbone_artifact;
        spec.input_size = input_size;
        spec.head_dim = transfer_head_dim;
        return spec;
    }
};

struct SplitConfig {
    SplitRatios ratios;
    std::uint64_t seed = 42;
    bool speaker_independent = false;
};

struct ExperimentConfig {
    CorpusConfig corpus;
    PreprocessConfig preprocessing;
    ExtractorConfig extractor;
    FeaturesConfig features;
    ModelConfig model;
    TrainConfig training;
    SplitConfig split;
    std::string output_dir = "out";
    int workers = 1;

    void validate() const {
        if (corpus.root.empty() && corpus.manifest.empty() && !corpus.synthetic)
            throw ConfigError("corpus: one of root, manifest, or synthetic=true is required");
        label_rule_from_string(corpus.label_rule);
        if (corpus.synthetic && corpus.synth_n_per_class < 1)
            throw ConfigError("corpus.synthetic.n_per_class must be >= 1");
        if (preprocessing.target_sample_rate <= 0)
            throw ConfigError("preprocessing.target_sample_rate must be positive");
        if (!(preprocessing.target_seconds > 0))
            throw ConfigError("preprocessing.target_seconds must be positive");
        if (extractor.kind != "synthetic" && extractor.kind != "reference")
            throw ConfigError("extractor.kind must be synthetic|reference");
        if (extractor.kind == "reference" && extractor.artifact.empty())
            throw ConfigError("extractor.artifact is required for the reference extractor");
        if (extractor.layer_index < 0 || extractor.layer_index >= kReferenceLayers)
            throw ConfigError("extractor.layer_index out of range [0, " +
                              std::to_string(kReferenceLayers) + ")");
        interp_from_string(features.interpolation);
        if (model.family != "proposed-cnn" && model.family != "transfer" &&
            model.family != "svm")
            throw ConfigError("model.family must be proposed-cnn|transfer|svm");
        if (model.input_size < 4 || model.input_size > 2048)
            throw ConfigError("model.input_size out of range");
        if (model.width_divisor < 1)
            throw ConfigError("model.width_divisor must be >= 1");
        if (model.family == "transfer") validate_transfer_scale(model.transfer_scale);
        training.validate();
        detail::check_ratios(split.ratios);
        if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"corpus",
          {{"root", c.corpus.root},
           {"manifest", c.corpus.manifest},
           {"label_rule", c.corpus.label_rule},
           {"synthetic", c.corpus.synthetic},
           {"synth_n_per_class", c.corpus.synth_n_per_class},
           {"synth_seed", c.corpus.synth_seed}}},
         {"preprocessing",
          {{"target_sample_rate", c.preprocessing.target_sample_rate},
           {"target_seconds", c.preprocessing.target_seconds},
           {"cache_audio", c.preprocessing.cache_audio}}},
         {"extractor",
          {{"kind", c.extractor.kind},
           {"artifact", c.extractor.artifact},
           {"layer_index", c.extractor.layer_index},
           {"synthetic_seed", c.extractor.synthetic_seed}}},
         {"features",
          {{"interpolation", c.features.interpolation}, {"cache_dir", c.features.cache_dir}}},
         {"model",
          {{"family", c.model.family},
           {"input_size", c.model.input_size},
           {"width_divisor", c.model.width_divisor},
           {"svm", c.model.svm},
           {"transfer_scale", c.model.transfer_scale},
           {"transfer_backbone_artifact", c.model.transfer_backbone_artifact},
           {"transfer_head_dim", c.model.transfer_head_dim}}},
         {"training", c.training},
         {"split",
          {{"ratios", {c.split.ratios.train, c.split.ratios.val, c.split.ratios.test}},
           {"seed", c.split.seed},
           {"speaker_independent", c.split.speaker_independent}}},
         {"output_dir", c.output_dir},
         {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    detail::check_keys(j, "(top level)",
                       {"corpus", "preprocessing", "extractor", "features", "model", "training",
                        "split", "output_dir", "workers"});
    if (j.contains("corpus")) {
        const auto& s = j.at("corpus");
        detail::check_keys(s, "corpus",
                           {"root", "manifest", "label_rule", "synthetic", "synth_n_per_class",
                            "synth_seed"});
        c.corpus.root = s.value("root", c.corpus.root);
        c.corpus.manifest = s.value("manifest", c.corpus.manifest);
        c.corpus.label_rule = s.value("label_rule", c.corpus.label_rule);
        c.corpus.synthetic = s.value("synthetic", c.corpus.synthetic);
        c.corpus.synth_n_per_class = s.value("synth_n_per_class", c.corpus.synth_n_per_class);
        c.corpus.synth_seed = s.value("synth_seed", c.corpus.synth_seed);
    }
    if (j.contains("preprocessing")) {
        const auto& s = j.at("preprocessing");
        detail::check_keys(s, "preprocessing",
                           {"target_sample_rate", "target_seconds", "cache_audio"});
        c.preprocessing.target_sample_rate =
            s.value("target_sample_rate", c.preprocessing.target_sample_rate);
        c.preprocessing.target_seconds =
            s.value("target_seconds", c.preprocessing.target_seconds);
        c.preprocessing.cache_audio = s.value("cache_audio", c.preprocessing.cache_audio);
    }
    if (j.contains("extractor")) {
        const auto& s = j.at("extractor");
        detail::check_keys(s, "extractor", {"kind", "artifact", "layer_index", "synthetic_seed"});
        c.extractor.kind = s.value("kind", c.extractor.kind);
        c.extractor.artifact = s.value("artifact", c.extractor.artifact);
        c.extractor.layer_index = s.value("layer_index", c.extractor.layer_index);
        c.extractor.synthetic_seed = s.value("synthetic_seed", c.extractor.synthetic_seed);
    }
    if (j.contains("features")) {
        const auto& s = j.at("features");
        detail::check_keys(s, "features", {"interpolation", "cache_dir"});
        c.features.interpolation = s.value("interpolation", c.features.interpolation);
        c.features.cache_dir = s.value("cache_dir", c.features.cache_dir);
    }
    if (j.contains("model")) {
        const auto& s = j.at("model");
        detail::check_keys(s, "model",
                           {"family", "input_size", "width_divisor", "svm", "transfer_scale",
                            "transfer_backbone_artifact", "transfer_head_dim"});
        c.model.family = s.value("family", c.model.family);
        c.model.input_size = s.value("input_size", c.model.input_size);
        c.model.width_divisor = s.value("width_divisor", c.model.width_divisor);
        if (s.contains("svm")) s.at("svm").get_to(c.model.svm);
        c.model.transfer_scale = s.value("transfer_scale", c.model.transfer_scale);
        c.model.transfer_backbone_artifact =
            s.value("transfer_backbone_artifact", c.model.transfer_backbone_artifact);
        c.model.transfer_head_dim = s.value("transfer_head_dim", c.model.transfer_head_dim);
    }
    if (j.contains("training")) j.at("training").get_to(c.training);
    if (j.contains("split")) {
        const auto& s = j.at("split");
        detail::check_keys(s, "split", {"ratios", "seed", "speaker_independent"});
        if (s.contains("ratios")) {
            const auto& r = s.at("ratios");
            if (!r.is_array() || r.size() != 3)
                throw ConfigError("split.ratios must be an array of three numbers");
            c.split.ratios = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
        }
        c.split.seed = s.value("seed", c.split.seed);
        c.split.speaker_independent =
            s.value("speaker_independent", c.split.speaker_independent);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.workers = j.value("workers", c.workers);
}

inline ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    try {
        j.get_to(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad config value in " + path.string() + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

// Fully resolved snapshot; reloading it reproduces the run.
inline void write_config_snapshot(const ExperimentConfig& cfg, const fs::path& path) {
    const nlohmann::json j = cfg;
    atomic_write_text(path, j.dump(2) + "\n");
}

} // namespace ser
