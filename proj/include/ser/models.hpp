#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/cache.hpp"
#include "ser/corpus.hpp"
#include "ser/layers.hpp"
#include "ser/svm.hpp"
#include "ser/tensor.hpp"
#include "ser/util.hpp"

namespace ser {

// ---------------------------------------------------------------------------
// Model specs

// The five-stage convolutional classifier. Defaults reproduce the reference
// architecture exactly: 300x300 input, stage widths 64/128/256/512/512 with
// conv counts 1/4/4/4/2, a 1x1 projection to 1024 channels before global
// average pooling, a 64-unit dense layer, and a 5-way softmax. Dropout rates
// rise with depth. `scaled()` shrinks widths and input for cheap hermetic
// runs without changing the topology.
struct CnnSpec {
    int input_size = 300;
    int in_channels = 1;
    std::array<int, 5> stage_widths = {64, 128, 256, 512, 512};
    int head_channels = 1024;
    int fc_dim = 64;
    int n_classes = kNumClasses;
    std::array<double, 5> dropout_rates = {0.1, 0.2, 0.3, 0.4, 0.6};

    static constexpr std::array<int, 5> stage_convs = {1, 4, 4, 4, 2};

    static CnnSpec scaled(int width_divisor, int input_size) {
        CnnSpec spec;
        spec.input_size = input_size;
        for (auto& w : spec.stage_widths) w = std::max(2, w / width_divisor);
        spec.head_channels = std::max(4, spec.head_channels / width_divisor);
        return spec;
    }
};

inline void to_json(nlohmann::json& j, const CnnSpec& s) {
    j = {{"input_size", s.input_size},       {"in_channels", s.in_channels},
         {"stage_widths", s.stage_widths},   {"head_channels", s.head_channels},
         {"fc_dim", s.fc_dim},               {"n_classes", s.n_classes},
         {"dropout_rates", s.dropout_rates}};
}
inline void from_json(const nlohmann::json& j, CnnSpec& s) {
    s.input_size = j.value("input_size", s.input_size);
    s.in_channels = j.value("in_channels", s.in_channels);
    if (j.contains("stage_widths")) j.at("stage_widths").get_to(s.stage_widths);
    s.head_channels = j.value("head_channels", s.head_channels);
    s.fc_dim = j.value("fc_dim", s.fc_dim);
    s.n_classes = j.value("n_classes", s.n_classes);
    if (j.contains("dropout_rates")) j.at("dropout_rates").get_to(s.dropout_rates);
}

struct TransferSpec {
    std::string scale = "b3";      // b0..b7
    std::string backbone_artifact; // empty -> deterministic hermetic stub
    int input_size = 300;
    int head_dim = 64;
    int n_classes = kNumClasses;
};

inline void to_json(nlohmann::json& j, const TransferSpec& s) {
    j = {{"scale", s.scale},
         {"backbone_artifact", s.backbone_artifact},
         {"input_size", s.input_size},
         {"head_dim", s.head_dim},
         {"n_classes", s.n_classes}};
}
inline void from_json(const nlohmann::json& j, TransferSpec& s) {
    s.scale = j.value("scale", s.scale);
    s.backbone_artifact = j.value("backbone_artifact", s.backbone_artifact);
    s.input_size = j.value("input_size", s.input_size);
    s.head_dim = j.value("head_dim", s.head_dim);
    s.n_classes = j.value("n_classes", s.n_classes);
}

inline void validate_transfer_scale(const std::string& scale) {
    if (scale.size() != 2 || scale[0] != 'b' || scale[1] < '0' || scale[1] > '7')
        throw ConfigError("unknown transfer scale '" + scale + "' (expected b0..b7)");
}

// ---------------------------------------------------------------------------
// Checkpoint container: "SERM", u16 version, u32 manifest length, manifest
// JSON, u64 blob length, blob, u32 crc32 over manifest+blob.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json manifest;
    std::string blob;
};

inline void write_checkpoint_file(const fs::path& path, const nlohmann::json& manifest,
                                  const std::string& blob) {
    const std::string mtext = manifest.dump();
    std::string out;
    out.reserve(18 + mtext.size() + blob.size());
    out.append("SERM");
    detail::put_u16(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(mtext.size()));
    out += mtext;
    const std::uint64_t blen = blob.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((blen >> (8 * i)) & 0xff));
    out += blob;
    std::uint32_t crc = crc32_of(mtext.data(), mtext.size());
    crc = crc32_of(blob.data(), blob.size(), crc);
    detail::put_u32(out, crc);
    atomic_write_bytes(path, out.data(), out.size());
}

inline Checkpoint read_checkpoint_file(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 22 || std::memcmp(bytes.data(), "SERM", 4) != 0)
        throw DataError("bad checkpoint magic in " + path.string());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint16_t version = detail::get_u16(p + 4);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint version mismatch in " + path.string());
    const std::uint32_t mlen = detail::get_u32(p + 6);
    if (bytes.size() < 10 + mlen + 8 + 4)
        throw DataError("truncated checkpoint: " + path.string());
    std::uint64_t blen = 0;
    for (int i = 7; i >= 0; --i) blen = (blen << 8) | p[10 + mlen + i];
    if (bytes.size() != 10 + mlen + 8 + blen + 4)
        throw DataError("truncated checkpoint: " + path.string());
    std::uint32_t crc = crc32_of(bytes.data() + 10, mlen);
    crc = crc32_of(bytes.data() + 18 + mlen, blen, crc);
    if (crc != detail::get_u32(p + 18 + mlen + blen))
        throw DataError("checkpoint checksum mismatch in " + path.string());

    Checkpoint ck;
    try {
        ck.manifest = nlohmann::json::parse(bytes.substr(10, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint manifest in " + path.string() + ": " + e.what());
    }
    ck.blob = bytes.substr(18 + mlen, blen);
    return ck;
}

// ---------------------------------------------------------------------------
// Neural models

template <typename T>
struct NnModel {
    std::string family; // "proposed-cnn" | "transfer"
    nlohmann::json spec_json;
    Sequential<T> net;
    std::vector<int> label_map{0, 1, 2, 3, 4}; // model index -> canonical code
    int input_size = 300;
    int in_channels = 1;
    int n_classes = kNumClasses;
    std::size_t n_backbone_layers = 0; // transfer only; prefix after the replicate layer

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        check_input(x.shape);
        return net.forward(x, training);
    }

    // Row-wise softmax of the logits, computed in double.
    std::vector<std::vector<double>> predict_proba(const Tensor<T>& x) {
        Tensor<T> logits = forward(x, false);
        std::vector<std::vector<double>> out(static_cast<std::size_t>(logits.shape.n));
        for (int i = 0; i < logits.shape.n; ++i) {
            const T* row = logits.sample(i);
            double mx = row[0];
            for (int c = 1; c < n_classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
            double denom = 0.0;
            std::vector<double> p(static_cast<std::size_t>(n_classes));
            for (int c = 0; c < n_classes; ++c) {
                p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row[c]) - mx);
                denom += p[static_cast<std::size_t>(c)];
            }
            for (auto& v : p) v /= denom;
            out[static_cast<std::size_t>(i)] = std::move(p);
        }
        return out;
    }

    std::vector<std::vector<T>> snapshot_params() {
        std::vector<std::vector<T>> out;
        for (auto& p : net.params()) out.push_back(*p.value);
        return out;
    }

    void restore_params(const std::vector<std::vector<T>>& snap) {
        auto refs = net.params();
        if (refs.size() != snap.size()) throw Error("parameter snapshot mismatch");
        for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = snap[i];
    }

private:
    void check_input(const Shape& s) const {
        if (s.c != in_channels || s.h != input_size || s.w != input_size)
            throw DataError("model expects input " + std::to_string(in_channels) + "x" +
                            std::to_string(input_size) + "x" + std::to_string(input_size) +
                            ", got " + s.str());
    }
};

namespace detail {

inline Shape pooled_shape(const Shape& s) {
    if (s.h < 2 || s.w < 2) return s; // pooling skipped on degenerate maps
    return {s.n, s.c, s.h / 2, s.w / 2};
}

} // namespace detail

// Builds the five-stage CNN and walks the stage ladder against the spec,
// failing the build on any mismatch. Stage checkpoints are the outputs of
// each stage's final convolution block, before the stage-boundary pool.
template <typename T>
NnModel<T> build_proposed_cnn(const CnnSpec& spec, std::uint64_t seed) {
    if (spec.input_size < 4) throw ConfigError("cnn input_size must be >= 4");
    if (spec.n_classes < 2) throw ConfigError("cnn n_classes must be >= 2");
    for (double r : spec.dropout_rates)
        if (r < 0.0 || r >= 1.0) throw ConfigError("dropout rates must lie in [0, 1)");

    NnModel<T> model;
    model.family = "proposed-cnn";
    model.spec_json = spec;
    model.input_size = spec.input_size;
    model.in_channels = spec.in_channels;
    model.n_classes = spec.n_classes;

    // Independent arithmetic ladder: each stage halves the spatial size at its
    // boundary (floor), so 300 -> 150 -> 75 -> 37 -> 18 for the default spec.
    std::array<Shape, 5> expected_stage{};
    {
        int side = spec.input_size;
        for (int s = 0; s < 5; ++s) {
            expected_stage[static_cast<std::size_t>(s)] =
                Shape{1, spec.stage_widths[static_cast<std::size_t>(s)], side, side};
            if (s < 4 && side >= 2) side /= 2;
        }
    }

    std::vector<std::size_t> stage_checkpoint_layers;
    int in_c = spec.in_channels;
    for (int s = 0; s < 5; ++s) {
        const int width = spec.stage_widths[static_cast<std::size_t>(s)];
        for (int conv = 0; conv < CnnSpec::stage_convs[static_cast<std::size_t>(s)]; ++conv) {
            model.net.template emplace<nn::Conv2d<T>>(in_c, width, 3, 1, 1);
            model.net.template emplace<nn::BatchNorm2d<T>>(width);
            model.net.template emplace<nn::Relu<T>>();
            in_c = width;
        }
        stage_checkpoint_layers.push_back(model.net.size());
        if (s < 4 &&
            expected_stage[static_cast<std::size_t>(s)].h >= 2)
            model.net.template emplace<nn::MaxPool2<T>>();
        auto* drop = model.net.template emplace<nn::Dropout<T>>(
            spec.dropout_rates[static_cast<std::size_t>(s)]);
        drop->reseed(mix_seed(seed, "dropout-stage-" + std::to_string(s)));
    }
    model.net.template emplace<nn::Conv2d<T>>(in_c, spec.head_channels, 1, 1, 0);
    model.net.template emplace<nn::BatchNorm2d<T>>(spec.head_channels);
    model.net.template emplace<nn::Relu<T>>();
    model.net.template emplace<nn::GlobalAvgPool<T>>();
    model.net.template emplace<nn::Dense<T>>(spec.head_channels, spec.fc_dim);
    model.net.template emplace<nn::Relu<T>>();
    model.net.template emplace<nn::Dense<T>>(spec.fc_dim, spec.n_classes);

    // Shape-ladder assertion.
    const auto walk = model.net.shape_walk({1, spec.in_channels, spec.input_size, spec.input_size});
    for (int s = 0; s < 5; ++s) {
        const Shape got = walk[stage_checkpoint_layers[static_cast<std::size_t>(s)]];
        const Shape want = expected_stage[static_cast<std::size_t>(s)];
        if (got != want)
            throw Error("shape ladder mismatch at stage " + std::to_string(s + 1) + ": built " +
                        got.str() + ", expected " + want.str());
    }
    const Shape head = walk[walk.size() - 4]; // after global average pool
    if (head.c != spec.head_channels || head.h != 1 || head.w != 1)
        throw Error("shape ladder mismatch at average pool: " + head.str());
    const Shape fc = walk[walk.size() - 2];
    if (fc.c != spec.fc_dim)
        throw Error("shape ladder mismatch at fully connected layer: " + fc.str());
    if (walk.back().c != spec.n_classes)
        throw Error("shape ladder mismatch at softmax: " + walk.back().str());

    Rng rng(mix_seed(seed, "cnn-init"));
    model.net.init(rng);
    return model;
}

// ---------------------------------------------------------------------------
// Transfer model: frozen convolutional backbone + trainable dense head.

struct BackboneLayerDesc {
    std::string type; // conv | bn | relu
    int in = 0, out = 0, k = 0, stride = 1, pad = 0;
};

inline void to_json(nlohmann::json& j, const BackboneLayerDesc& d) {
    j = {{"type", d.type}, {"in", d.in},         {"out", d.out},
         {"k", d.k},       {"stride", d.stride}, {"pad", d.pad}};
}
inline void from_json(const nlohmann::json& j, BackboneLayerDesc& d) {
    d.type = j.at("type").get<std::string>();
    d.in = j.value("in", 0);
    d.out = j.value("out", 0);
    d.k = j.value("k", 0);
    d.stride = j.value("stride", 1);
    d.pad = j.value("pad", 0);
}

// Stub stand-in for the pretrained image backbone in hermetic mode. Weights
// depend only on the scale tag, mimicking a fixed published artifact.
inline std::vector<BackboneLayerDesc> stub_backbone_desc() {
    return {{"conv", 3, 8, 3, 2, 1}, {"bn", 0, 8}, {"relu"},
            {"conv", 8, 16, 3, 2, 1}, {"bn", 0, 16}, {"relu"}};
}

template <typename T>
std::size_t append_backbone_layers(Sequential<T>& net,
                                   const std::vector<BackboneLayerDesc>& desc) {
    std::size_t added = 0;
    for (const auto& d : desc) {
        if (d.type == "conv") {
            net.template emplace<nn::Conv2d<T>>(d.in, d.out, d.k, d.stride, d.pad);
        } else if (d.type == "bn") {
            net.template emplace<nn::BatchNorm2d<T>>(d.out);
        } else if (d.type == "relu") {
            net.template emplace<nn::Relu<T>>();
        } else {
            throw DataError("unknown backbone layer type '" + d.type + "'");
        }
        ++added;
    }
    return added;
}

namespace detail {

template <typename T>
void copy_params_from_blob(Sequential<T>& net, const nlohmann::json& param_meta,
                           const std::string& blob, const std::string& what) {
    auto refs = net.params();
    if (param_meta.size() != refs.size())
        throw DataError("parameter table mismatch in " + what);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& meta = param_meta[i];
        const auto count = meta.at("count").get<std::size_t>();
        if (meta.at("tag").get<std::string>() != refs[i].tag || count != refs[i].value->size())
            throw DataError("parameter layout mismatch at '" + refs[i].tag + "' in " + what);
        const std::size_t bytes = count * sizeof(T);
        if (offset + bytes > blob.size()) throw DataError("parameter blob overrun in " + what);
        std::memcpy(refs[i].value->data(), blob.data() + offset, bytes);
        offset += bytes;
    }
    if (offset != blob.size()) throw DataError("parameter blob underrun in " + what);
}

template <typename T>
void append_params_to_blob(Sequential<T>& net, nlohmann::json& param_meta, std::string& blob) {
    for (auto& p : net.params()) {
        param_meta.push_back({{"tag", p.tag}, {"count", p.value->size()}});
        blob.append(reinterpret_cast<const char*>(p.value->data()),
                    p.value->size() * sizeof(T));
    }
}

} // namespace detail

// Exports a backbone (layer description + weights) as a checkpoint usable via
// TransferSpec::backbone_artifact.
template <typename T>
void save_backbone_artifact(const fs::path& path, const std::vector<BackboneLayerDesc>& desc,
                            Sequential<T>& net) {
    nlohmann::json manifest = {{"family", "backbone"},
                               {"layers", desc},
                               {"dtype", sizeof(T) == 4 ? "f32" : "f64"},
                               {"params", nlohmann::json::array()}};
    std::string blob;
    detail::append_params_to_blob(net, manifest["params"], blob);
    write_checkpoint_file(path, manifest, blob);
}

template <typename T>
NnModel<T> build_transfer(const TransferSpec& spec, std::uint64_t seed) {
    validate_transfer_scale(spec.scale);
    if (spec.input_size < 8) throw ConfigError("transfer input_size must be >= 8");

    NnModel<T> model;
    model.family = "transfer";
    model.spec_json = spec;
    model.input_size = spec.input_size;
    model.in_channels = 1;
    model.n_classes = spec.n_classes;

    model.net.template emplace<nn::ChannelReplicate<T>>(3);

    std::vector<BackboneLayerDesc> desc;
    nlohmann::json backbone_params;
    std::string backbone_blob;
    if (spec.backbone_artifact.empty()) {
        desc = stub_backbone_desc();
    } else {
        const Checkpoint ck = read_checkpoint_file(spec.backbone_artifact);
        if (ck.manifest.value("family", "") != "backbone")
            throw DataError("not a backbone artifact: " + spec.backbone_artifact);
        if (ck.manifest.value("dtype", "") != (sizeof(T) == 4 ? "f32" : "f64"))
            throw DataError("backbone artifact dtype mismatch: " + spec.backbone_artifact);
        desc = ck.manifest.at("layers").get<std::vector<BackboneLayerDesc>>();
        backbone_params = ck.manifest.at("params");
        backbone_blob = ck.blob;
    }
    model.n_backbone_layers = append_backbone_layers(model.net, desc);

    // Head: pool the backbone features, one hidden dense layer, class logits.
    int feat_c = 3;
    for (const auto& d : desc)
        if (d.type == "conv") feat_c = d.out;
    model.net.template emplace<nn::GlobalAvgPool<T>>();
    model.net.template emplace<nn::Dense<T>>(feat_c, spec.head_dim);
    model.net.template emplace<nn::Relu<T>>();
    model.net.template emplace<nn::Dense<T>>(spec.head_dim, spec.n_classes);

    Rng rng(mix_seed(seed, "transfer-head-init"));
    model.net.init(rng);

    // Backbone weights come from the artifact (or the scale-seeded stub) and
    // are frozen; only the head stays trainable.
    {
        Sequential<T> backbone_only;
        append_backbone_layers(backbone_only, desc);
        if (spec.backbone_artifact.empty()) {
            Rng brng(mix_seed(0xb3, "stub-backbone-" + spec.scale));
            backbone_only.init(brng);
        } else {
            detail::copy_params_from_blob(backbone_only, backbone_params, backbone_blob,
                                          spec.backbone_artifact);
        }
        auto src = backbone_only.params();
        std::size_t si = 0;
        for (std::size_t li = 1; li <= model.n_backbone_layers; ++li) {
            for (auto& dst : model.net.layer(li).params()) {
                *dst.value = *src[si].value;
                ++si;
            }
            model.net.layer(li).set_frozen(true);
        }
    }

    // Walk shapes once so invalid geometry fails at build time.
    model.net.shape_walk({1, 1, spec.input_size, spec.input_size});
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoint save/load for all families

template <typename T>
void save_nn_checkpoint(NnModel<T>& model, const fs::path& path,
                        const nlohmann::json& extra = {}) {
    nlohmann::json manifest = {{"family", model.family},
                               {"spec", model.spec_json},
                               {"label_map", model.label_map},
                               {"dtype", sizeof(T) == 4 ? "f32" : "f64"},
                               {"params", nlohmann::json::array()}};
    if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
    std::string blob;
    detail::append_params_to_blob(model.net, manifest["params"], blob);
    manifest["spec_hash"] = to_hex(fnv1a64(model.spec_json.dump()));
    write_checkpoint_file(path, manifest, blob);
}

template <typename T>
NnModel<T> load_nn_checkpoint(const Checkpoint& ck, const std::string& what) {
    const std::string family = ck.manifest.value("family", "");
    if (ck.manifest.value("dtype", "") != (sizeof(T) == 4 ? "f32" : "f64"))
        throw DataError("checkpoint dtype mismatch in " + what);
    NnModel<T> model;
    if (family == "proposed-cnn") {
        model = build_proposed_cnn<T>(ck.manifest.at("spec").get<CnnSpec>(), 0);
    } else if (family == "transfer") {
        model = build_transfer<T>(ck.manifest.at("spec").get<TransferSpec>(), 0);
    } else {
        throw DataError("unknown model family '" + family + "' in " + what);
    }
    model.label_map = ck.manifest.at("label_map").get<std::vector<int>>();
    detail::copy_params_from_blob(model.net, ck.manifest.at("params"), ck.blob, what);
    return model;
}

// Any-family handle used by evaluate/predict.
struct LoadedModel {
    std::string family;
    std::optional<NnModel<float>> nn;
    std::optional<SvmModel> svm;
    nlohmann::json manifest;

    const std::vector<int>& label_map() const {
        return nn ? nn->label_map : svm->label_map();
    }
};

inline LoadedModel load_any_checkpoint(const fs::path& path) {
    const Checkpoint ck = read_checkpoint_file(path);
    LoadedModel out;
    out.family = ck.manifest.value("family", "");
    out.manifest = ck.manifest;
    if (out.family == "svm") {
        out.svm = SvmModel::from_checkpoint(ck.manifest, ck.blob, path.string());
    } else {
        out.nn = load_nn_checkpoint<float>(ck, path.string());
    }
    return out;
}

} // namespace ser
