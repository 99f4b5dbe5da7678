#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ser/errors.hpp"
#include "ser/features.hpp"
#include "ser/util.hpp"

namespace ser {

// SERF container: magic "SERF", u16 version, u32 rows, u32 cols, u8 dtype
// (0 = f32le), u32 crc32 of the payload, then the row-major payload.
// All integers little-endian.
inline constexpr std::uint16_t kSerfVersion = 1;

namespace detail {

inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

inline std::string encode_serf(std::size_t rows, std::size_t cols, const float* data) {
    std::string out;
    const std::size_t payload = rows * cols * sizeof(float);
    out.reserve(19 + payload);
    out.append("SERF");
    detail::put_u16(out, kSerfVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(rows));
    detail::put_u32(out, static_cast<std::uint32_t>(cols));
    out.push_back(0); // dtype f32le
    detail::put_u32(out, crc32_of(data, payload));
    out.append(reinterpret_cast<const char*>(data), payload);
    return out;
}

struct SerfArray {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;
};

inline SerfArray decode_serf(const std::string& bytes, const std::string& what) {
    if (bytes.size() < 19 || std::memcmp(bytes.data(), "SERF", 4) != 0)
        throw DataError("bad cache magic in " + what);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint16_t version = detail::get_u16(p + 4);
    if (version != kSerfVersion)
        throw DataError("cache version mismatch in " + what + " (got " +
                        std::to_string(version) + ", expected " +
                        std::to_string(kSerfVersion) + ")");
    SerfArray arr;
    arr.rows = detail::get_u32(p + 6);
    arr.cols = detail::get_u32(p + 10);
    const std::uint8_t dtype = p[14];
    if (dtype != 0) throw DataError("unsupported cache dtype in " + what);
    const std::uint32_t stored_crc = detail::get_u32(p + 15);
    const std::size_t payload = arr.rows * arr.cols * sizeof(float);
    if (bytes.size() != 19 + payload)
        throw DataError("truncated cache payload in " + what);
    if (crc32_of(bytes.data() + 19, payload) != stored_crc)
        throw DataError("cache checksum mismatch in " + what);
    arr.values.resize(arr.rows * arr.cols);
    std::memcpy(arr.values.data(), bytes.data() + 19, payload);
    return arr;
}

inline void write_serf_file(const fs::path& path, std::size_t rows, std::size_t cols,
                            const float* data) {
    const std::string bytes = encode_serf(rows, cols, data);
    atomic_write_bytes(path, bytes.data(), bytes.size());
}

inline SerfArray read_serf_file(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("cache file not found: " + path.string());
    return decode_serf(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Content-addressed feature cache

struct CacheKeyParts {
    std::string clip_ref;
    std::string extractor_id;
    int layer_index = 0;
    std::string transform; // "raw", "mean-pool", "resize300-bilinear", ...
};

struct CachedArray {
    SerfArray array;
    nlohmann::json sidecar;
};

class FeatureCache {
public:
    explicit FeatureCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    const fs::path& dir() const { return dir_; }

    static std::string key_for(const CacheKeyParts& parts) {
        return to_hex(fnv1a64(parts.clip_ref + "\x1f" + parts.extractor_id + "\x1f" +
                              std::to_string(parts.layer_index) + "\x1f" + parts.transform));
    }

    bool has(const std::string& key) const { return fs::exists(dir_ / (key + ".serf")); }

    std::string put(const CacheKeyParts& parts, std::size_t rows, std::size_t cols,
                    const float* data) const {
        const std::string key = key_for(parts);
        write_serf_file(dir_ / (key + ".serf"), rows, cols, data);
        nlohmann::json side = {
            {"clip_ref", parts.clip_ref},   {"extractor_id", parts.extractor_id},
            {"layer_index", parts.layer_index}, {"transform", parts.transform},
            {"rows", rows},                 {"cols", cols},
        };
        atomic_write_text(dir_ / (key + ".json"), side.dump(2) + "\n");
        return key;
    }

    std::string put(const FeatureMap& map) const {
        return put({map.clip_ref, map.extractor_id, map.layer_index, "raw"}, map.frames,
                   map.channels, map.values.data());
    }

    CachedArray get(const std::string& key) const {
        const fs::path file = dir_ / (key + ".serf");
        if (!fs::exists(file)) throw DataError("cache key not found: " + key);
        CachedArray out;
        out.array = decode_serf(read_file_bytes(file), file.string());
        const fs::path side = dir_ / (key + ".json");
        if (fs::exists(side)) out.sidecar = nlohmann::json::parse(read_file_bytes(side));
        return out;
    }

    FeatureMap get_map(const std::string& key) const {
        CachedArray stored = get(key);
        FeatureMap map;
        map.frames = stored.array.rows;
        map.channels = stored.array.cols;
        map.values = std::move(stored.array.values);
        if (stored.sidecar.is_object()) {
            map.clip_ref = stored.sidecar.value("clip_ref", "");
            map.extractor_id = stored.sidecar.value("extractor_id", "");
            map.layer_index = stored.sidecar.value("layer_index", 0);
        }
        return map;
    }

private:
    fs::path dir_;
};

// ---------------------------------------------------------------------------
// Reference extractor adapter
//
// The pretrained encoder itself is an external artifact. This adapter
// consumes its exported output: a directory with an index.json mapping clip
// source paths (and layer indices) to SERF feature files. The index content
// hash is recorded so runs can be traced to the exact artifact.
class PrecomputedExtractor : public FeatureExtractor {
public:
    explicit PrecomputedExtractor(const fs::path& artifact_dir) : dir_(artifact_dir) {
        const fs::path index = dir_ / "index.json";
        if (!fs::exists(index))
            throw DataError("extractor model artifact missing: " + index.string());
        const std::string bytes = read_file_bytes(index);
        artifact_hash_ = to_hex(fnv1a64(bytes));
        try {
            index_ = nlohmann::json::parse(bytes);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corrupt extractor artifact index: " + std::string(e.what()));
        }
        id_ = index_.value("extractor_id", std::string("xlsr53"));
        n_layers_ = index_.value("n_layers", kReferenceLayers);
        channels_ = index_.value("channels", kReferenceChannels);
        if (!index_.contains("features") || !index_["features"].is_object())
            throw DataError("corrupt extractor artifact index: missing features table");
    }

    std::string extractor_id() const override { return id_; }
    int n_layers() const override { return n_layers_; }
    std::size_t channels() const override { return channels_; }
    const std::string& artifact_hash() const { return artifact_hash_; }

    FeatureMap extract(const AudioClip& clip, int layer_index) override {
        check_layer(layer_index);
        check_normalized(clip, NormalizeParams{});
        const auto& table = index_["features"];
        const auto it = table.find(clip.source_path);
        if (it == table.end())
            throw DataError("no precomputed features for clip: " + clip.source_path);
        const auto layer_it = it->find(std::to_string(layer_index));
        if (layer_it == it->end())
            throw DataError("no precomputed features for layer " + std::to_string(layer_index) +
                            " of clip: " + clip.source_path);

        SerfArray arr = read_serf_file(dir_ / layer_it->get<std::string>());
        const std::size_t want_frames = expected_frame_count(clip.samples.size());
        if (arr.rows != want_frames || arr.cols != channels_)
            throw DataError("artifact feature shape " + std::to_string(arr.rows) + "x" +
                            std::to_string(arr.cols) + " does not match expected " +
                            std::to_string(want_frames) + "x" + std::to_string(channels_) +
                            " for " + clip.source_path);

        FeatureMap map;
        map.frames = arr.rows;
        map.channels = arr.cols;
        map.values = std::move(arr.values);
        map.layer_index = layer_index;
        map.extractor_id = id_;
        map.clip_ref = clip.source_path;
        return map;
    }

private:
    fs::path dir_;
    nlohmann::json index_;
    std::string id_;
    std::string artifact_hash_;
    int n_layers_ = kReferenceLayers;
    std::size_t channels_ = kReferenceChannels;
};

} // namespace ser
