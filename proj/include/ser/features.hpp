#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ser/corpus.hpp"
#include "ser/errors.hpp"
#include "ser/rng.hpp"

namespace ser {

// 2D encoder output, frames x channels, row-major.
struct FeatureMap {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::vector<float> values;

    int layer_index = 0;
    std::string extractor_id;
    std::string clip_ref;

    float& at(std::size_t r, std::size_t c) { return values[r * channels + c]; }
    float at(std::size_t r, std::size_t c) const { return values[r * channels + c]; }
};

struct PooledVector {
    std::vector<float> values;
    std::string pooling = "mean-over-frames";
    int layer_index = 0;
};

struct ResizedMap {
    std::size_t size = 0; // square side
    std::vector<float> values;
    std::string interpolation;

    float at(std::size_t r, std::size_t c) const { return values[r * size + c]; }
};

// Frame count of the reference wav2vec-style front end (kernel 400, stride
// 320 at 16 kHz): 112000 samples -> 349 frames. The synthetic extractor uses
// the same framing so hermetic shapes match the reference contract.
inline constexpr std::size_t kFrameWindow = 400;
inline constexpr std::size_t kFrameStride = 320;
inline constexpr std::size_t kReferenceChannels = 1024;
inline constexpr int kReferenceLayers = 25; // 0 = front end, 1..24 transformer blocks

inline std::size_t expected_frame_count(std::size_t n_samples) {
    if (n_samples < kFrameWindow) return 0;
    return (n_samples - kFrameWindow) / kFrameStride + 1;
}

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string extractor_id() const = 0;
    virtual int n_layers() const = 0;
    virtual std::size_t channels() const = 0;
    virtual FeatureMap extract(const AudioClip& clip, int layer_index) = 0;

protected:
    void check_layer(int layer_index) const {
        if (layer_index < 0 || layer_index >= n_layers())
            throw ConfigError("layer_index " + std::to_string(layer_index) +
                              " out of range [0, " + std::to_string(n_layers()) + ")");
    }
    static void check_normalized(const AudioClip& clip, const NormalizeParams& params) {
        if (clip.sample_rate != params.target_sample_rate ||
            clip.samples.size() != params.target_samples())
            throw DataError("clip is not normalized (" + std::to_string(clip.samples.size()) +
                            " samples at " + std::to_string(clip.sample_rate) + " Hz): " +
                            clip.source_path);
    }
};

// Hermetic stand-in for the pretrained encoder: frames the waveform with the
// reference stride, takes the magnitude spectrum of each Hann-windowed frame,
// and projects it to the channel dimension with a fixed seeded random matrix.
// Each layer has its own projection and bias; a silent input yields the bias
// in every frame.
class SyntheticExtractor : public FeatureExtractor {
public:
    explicit SyntheticExtractor(std::uint64_t seed = 42,
                                std::size_t n_channels = kReferenceChannels,
                                int n_layers = kReferenceLayers,
                                bool require_normalized = true)
        : seed_(seed),
          channels_(n_channels),
          n_layers_(n_layers),
          require_normalized_(require_normalized),
          hann_(kFrameWindow) {
        for (std::size_t i = 0; i < kFrameWindow; ++i)
            hann_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (kFrameWindow - 1));
    }

    SyntheticExtractor(const SyntheticExtractor&) = delete;
    SyntheticExtractor& operator=(const SyntheticExtractor&) = delete;

    std::string extractor_id() const override {
        return "synthetic-v1:seed=" + std::to_string(seed_);
    }
    int n_layers() const override { return n_layers_; }
    std::size_t channels() const override { return channels_; }

    FeatureMap extract(const AudioClip& clip, int layer_index) override {
        check_layer(layer_index);
        if (require_normalized_) check_normalized(clip, NormalizeParams{});
        if (clip.samples.size() < kFrameWindow)
            throw DataError("clip too short to frame: " + clip.source_path);
        for (float v : clip.samples)
            if (!std::isfinite(v)) throw DataError("non-finite sample in " + clip.source_path);

        const Projection& proj = projection(layer_index);
        const std::size_t frames = expected_frame_count(clip.samples.size());

        FeatureMap map;
        map.frames = frames;
        map.channels = channels_;
        map.values.resize(frames * channels_);
        map.layer_index = layer_index;
        map.extractor_id = extractor_id();
        map.clip_ref = clip.source_path;

        Eigen::FFT<double> fft;
        std::vector<double> frame(kFftSize, 0.0);
        std::vector<std::complex<double>> spectrum;
        std::vector<double> mags(kBins);
        for (std::size_t f = 0; f < frames; ++f) {
            const float* src = clip.samples.data() + f * kFrameStride;
            for (std::size_t i = 0; i < kFrameWindow; ++i) frame[i] = src[i] * hann_[i];
            std::fill(frame.begin() + kFrameWindow, frame.end(), 0.0);
            fft.fwd(spectrum, frame);
            for (std::size_t k = 0; k < kBins; ++k) mags[k] = std::abs(spectrum[k]);

            float* dst = map.values.data() + f * channels_;
            for (std::size_t c = 0; c < channels_; ++c) {
                double acc = proj.bias[c];
                const double* col = proj.weights.data() + c * kBins;
                for (std::size_t k = 0; k < kBins; ++k) acc += mags[k] * col[k];
                dst[c] = static_cast<float>(acc);
            }
        }
        return map;
    }

    // Feature value of an all-zero frame, the constant row a silent clip maps to.
    std::vector<float> bias_response(int layer_index) {
        check_layer(layer_index);
        const Projection& proj = projection(layer_index);
        std::vector<float> out(channels_);
        for (std::size_t c = 0; c < channels_; ++c) out[c] = static_cast<float>(proj.bias[c]);
        return out;
    }

private:
    static constexpr std::size_t kFftSize = 512;
    static constexpr std::size_t kBins = kFftSize / 2 + 1;

    struct Projection {
        std::vector<double> weights; // channels x bins, row-major per channel
        std::vector<double> bias;
    };

    const Projection& projection(int layer_index) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = projections_.find(layer_index);
        if (it != projections_.end()) return it->second;

        Projection p;
        p.weights.resize(channels_ * kBins);
        p.bias.resize(channels_);
        Rng wrng(mix_seed(seed_, "proj-layer-" + std::to_string(layer_index)));
        const double scale = 1.0 / std::sqrt(static_cast<double>(kBins));
        for (auto& w : p.weights) w = wrng.normal() * scale;
        Rng brng(mix_seed(seed_, "bias-layer-" + std::to_string(layer_index)));
        for (auto& b : p.bias) b = brng.normal() * 0.05;
        return projections_.emplace(layer_index, std::move(p)).first->second;
    }

    std::uint64_t seed_;
    std::size_t channels_;
    int n_layers_;
    bool require_normalized_;
    std::mutex mutex_;
    std::unordered_map<int, Projection> projections_;
    std::vector<double> hann_;
};

// ---------------------------------------------------------------------------
// Map transforms

inline PooledVector mean_pool(const FeatureMap& map) {
    if (map.frames == 0 || map.channels == 0) throw DataError("cannot pool an empty feature map");
    PooledVector out;
    out.layer_index = map.layer_index;
    out.values.resize(map.channels);
    std::vector<double> acc(map.channels, 0.0);
    for (std::size_t r = 0; r < map.frames; ++r) {
        const float* row = map.values.data() + r * map.channels;
        for (std::size_t c = 0; c < map.channels; ++c) acc[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(map.frames);
    for (std::size_t c = 0; c < map.channels; ++c)
        out.values[c] = static_cast<float>(acc[c] * inv);
    return out;
}

enum class Interp { bilinear, nearest };

inline Interp interp_from_string(const std::string& s) {
    if (s == "bilinear") return Interp::bilinear;
    if (s == "nearest") return Interp::nearest;
    throw ConfigError("unknown interpolation '" + s + "' (expected bilinear|nearest)");
}

inline std::string to_string(Interp i) {
    return i == Interp::bilinear ? "bilinear" : "nearest";
}

namespace detail {

struct AxisWeights {
    std::vector<std::size_t> lo;
    std::vector<double> frac; // weight of lo+1
};

// Corner-aligned source coordinates: output 0 -> input 0, output n-1 -> input m-1.
inline AxisWeights axis_weights(std::size_t in, std::size_t out) {
    AxisWeights w;
    w.lo.resize(out);
    w.frac.resize(out);
    const double scale = out > 1 ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (std::size_t i = 0; i < out; ++i) {
        double pos = i * scale;
        if (pos > static_cast<double>(in - 1)) pos = static_cast<double>(in - 1);
        auto lo = static_cast<std::size_t>(pos);
        if (lo >= in - 1) lo = in - 2;
        w.lo[i] = lo;
        w.frac[i] = pos - static_cast<double>(lo);
    }
    return w;
}

} // namespace detail

// Interpolates the (frames x channels) grid onto a square target grid with
// corner alignment. Weights and accumulation are double precision; output is
// rounded to f32 at the end.
inline ResizedMap resize_to_square(const FeatureMap& map, std::size_t target = 300,
                                   Interp interp = Interp::bilinear) {
    if (map.frames < 2 || map.channels < 2)
        throw DataError("cannot resize a degenerate map (" + std::to_string(map.frames) + "x" +
                        std::to_string(map.channels) + "); need at least 2x2");
    if (target < 2) throw ConfigError("resize target must be >= 2");

    ResizedMap out;
    out.size = target;
    out.interpolation = to_string(interp);
    out.values.resize(target * target);

    const auto rows = detail::axis_weights(map.frames, target);
    const auto cols = detail::axis_weights(map.channels, target);

    if (interp == Interp::nearest) {
        for (std::size_t i = 0; i < target; ++i) {
            const std::size_t r = rows.lo[i] + (rows.frac[i] >= 0.5 ? 1 : 0);
            for (std::size_t j = 0; j < target; ++j) {
                const std::size_t c = cols.lo[j] + (cols.frac[j] >= 0.5 ? 1 : 0);
                out.values[i * target + j] = map.at(r, c);
            }
        }
        return out;
    }

    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t r0 = rows.lo[i];
        const double fr = rows.frac[i];
        const float* top = map.values.data() + r0 * map.channels;
        const float* bot = top + map.channels;
        for (std::size_t j = 0; j < target; ++j) {
            const std::size_t c0 = cols.lo[j];
            const double fc = cols.frac[j];
            const double v00 = top[c0], v01 = top[c0 + 1];
            const double v10 = bot[c0], v11 = bot[c0 + 1];
            const double v = (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) +
                             fr * ((1.0 - fc) * v10 + fc * v11);
            out.values[i * target + j] = static_cast<float>(v);
        }
    }
    return out;
}

} // namespace ser
