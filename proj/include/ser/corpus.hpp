#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ser/audio_io.hpp"
#include "ser/errors.hpp"
#include "ser/resample.hpp"
#include "ser/rng.hpp"
#include "ser/util.hpp"

namespace ser {

// The five model targets, coded by descending ShEMO support. `fear` exists
// only as an ingestion-time tag and never becomes an EmotionLabel.
enum class EmotionLabel : int {
    anger = 0,
    neutral = 1,
    sadness = 2,
    surprise = 3,
    happiness = 4,
};

inline constexpr int kNumClasses = 5;
inline constexpr const char* kFearTag = "fear";

inline const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names = {
        "anger", "neutral", "sadness", "surprise", "happiness"};
    return names;
}

inline std::string to_string(EmotionLabel label) {
    return class_names()[static_cast<std::size_t>(label)];
}

inline bool is_corpus_tag(const std::string& tag) {
    if (tag == kFearTag) return true;
    for (const auto& n : class_names())
        if (n == tag) return true;
    return false;
}

inline std::optional<EmotionLabel> label_from_tag(const std::string& tag) {
    for (int i = 0; i < kNumClasses; ++i)
        if (class_names()[static_cast<std::size_t>(i)] == tag)
            return static_cast<EmotionLabel>(i);
    return std::nullopt;
}

struct ManifestEntry {
    std::string path;
    std::string label; // one of the six corpus tags, including fear pre-filter
    std::string speaker_id;
    double duration_seconds = 0.0;
};

struct CorpusManifest {
    std::vector<ManifestEntry> entries;
    int format_version = 1;
};

inline void validate_manifest(const CorpusManifest& m) {
    std::unordered_set<std::string> seen;
    for (const auto& e : m.entries) {
        if (!seen.insert(e.path).second)
            throw DataError("duplicate manifest path: " + e.path);
        if (!is_corpus_tag(e.label))
            throw DataError("unknown label '" + e.label + "' for " + e.path);
        if (!(e.duration_seconds > 0.0))
            throw DataError("non-positive duration for " + e.path);
    }
}

inline constexpr const char* kManifestHeader = "#ser-manifest v1";

inline std::string manifest_to_text(const CorpusManifest& m) {
    std::string out = kManifestHeader;
    out.push_back('\n');
    char buf[64];
    for (const auto& e : m.entries) {
        std::snprintf(buf, sizeof(buf), "%.6f", e.duration_seconds);
        out += e.path + "\t" + e.label + "\t" + e.speaker_id + "\t" + buf + "\n";
    }
    return out;
}

inline void save_manifest(const CorpusManifest& m, const fs::path& path) {
    atomic_write_text(path, manifest_to_text(m));
}

inline CorpusManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw DataError("bad manifest header in " + path.string() +
                        " (expected '" + kManifestHeader + "')");
    CorpusManifest m;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        std::size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            const auto tab = line.find('\t', start);
            if (f < 3 && tab == std::string::npos)
                throw DataError("malformed manifest line " + std::to_string(lineno) + " in " +
                                path.string());
            fields[static_cast<std::size_t>(f)] =
                line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
            start = tab + 1;
        }
        ManifestEntry e;
        e.path = fields[0];
        e.label = fields[1];
        e.speaker_id = fields[2];
        e.duration_seconds = std::stod(fields[3]);
        m.entries.push_back(std::move(e));
    }
    validate_manifest(m);
    return m;
}

// ---------------------------------------------------------------------------
// Corpus scanning

enum class LabelRule {
    // ShEMO file naming: <gender letter><2-digit speaker><emotion letter><index>,
    // e.g. M03S05.wav. Speaker id is the first three characters.
    shemo,
    // Label from the parent directory name; speaker from the second
    // '_'-separated stem token when present, else the whole stem.
    dirname,
};

inline LabelRule label_rule_from_string(const std::string& s) {
    if (s == "shemo") return LabelRule::shemo;
    if (s == "dirname") return LabelRule::dirname;
    throw ConfigError("unknown label rule '" + s + "' (expected shemo|dirname)");
}

namespace detail {

inline std::optional<std::string> shemo_letter_tag(char c) {
    switch (c) {
        case 'A': return "anger";
        case 'N': return "neutral";
        case 'S': return "sadness";
        case 'W': return "surprise";
        case 'H': return "happiness";
        case 'F': return std::string(kFearTag);
        default: return std::nullopt;
    }
}

struct LabelGuess {
    std::string label;
    std::string speaker;
};

inline std::optional<LabelGuess> apply_label_rule(const fs::path& file, LabelRule rule) {
    const std::string stem = file.stem().string();
    if (rule == LabelRule::shemo) {
        if (stem.size() < 5) return std::nullopt;
        if (!std::isalpha(static_cast<unsigned char>(stem[0])) ||
            !std::isdigit(static_cast<unsigned char>(stem[1])) ||
            !std::isdigit(static_cast<unsigned char>(stem[2])))
            return std::nullopt;
        const auto tag = shemo_letter_tag(stem[3]);
        if (!tag) return std::nullopt;
        return LabelGuess{*tag, stem.substr(0, 3)};
    }
    const std::string dir = file.parent_path().filename().string();
    if (!is_corpus_tag(dir)) return std::nullopt;
    std::string speaker = stem;
    const auto first = stem.find('_');
    if (first != std::string::npos) {
        const auto second = stem.find('_', first + 1);
        speaker = stem.substr(first + 1, second == std::string::npos ? std::string::npos
                                                                     : second - first - 1);
    }
    return LabelGuess{dir, speaker};
}

} // namespace detail

struct ScanResult {
    CorpusManifest manifest;
    std::vector<std::string> warnings; // undecodable or unlabelable files
};

inline ScanResult scan_corpus(const fs::path& root, LabelRule rule) {
    if (!fs::exists(root) || !fs::is_directory(root))
        throw DataError("no audio found: directory does not exist: " + root.string());

    std::vector<fs::path> files;
    for (const auto& de : fs::recursive_directory_iterator(root)) {
        if (!de.is_regular_file()) continue;
        std::string ext = de.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".wav") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());

    ScanResult result;
    for (const auto& f : files) {
        const auto guess = detail::apply_label_rule(f, rule);
        if (!guess) {
            result.warnings.push_back("unlabeled file skipped: " + f.string());
            continue;
        }
        try {
            const WavData wav = read_wav(f);
            ManifestEntry e;
            e.path = fs::absolute(f).string();
            e.label = guess->label;
            e.speaker_id = guess->speaker;
            e.duration_seconds = wav.duration_seconds();
            result.manifest.entries.push_back(std::move(e));
        } catch (const Error& err) {
            result.warnings.push_back(std::string("undecodable file: ") + err.what());
        }
    }
    if (result.manifest.entries.empty())
        throw DataError("no audio found under " + root.string());
    validate_manifest(result.manifest);
    return result;
}

// Drops fear-tagged entries, preserving order of the rest.
inline CorpusManifest filter_fear(const CorpusManifest& manifest,
                                  std::vector<std::string>* warnings = nullptr) {
    CorpusManifest out;
    out.format_version = manifest.format_version;
    for (const auto& e : manifest.entries)
        if (e.label != kFearTag) out.entries.push_back(e);
    if (warnings) {
        const auto removed = manifest.entries.size() - out.entries.size();
        if (removed > 0)
            warnings->push_back("filtered " + std::to_string(removed) + " fear-labeled entries");
        if (out.entries.empty() && !manifest.entries.empty())
            warnings->push_back("manifest is empty after fear filtering");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizeParams {
    int target_sample_rate = 16000;
    double target_seconds = 7.0;

    std::size_t target_samples() const {
        return static_cast<std::size_t>(std::llround(target_seconds * target_sample_rate));
    }
};

struct AudioClip {
    std::vector<float> samples; // mono, [-1, 1], exactly target_samples() long
    int sample_rate = 0;
    std::string label;
    std::string speaker_id;
    std::string source_path;
    double original_duration = 0.0;
};

namespace detail {

// Resampler tables are expensive to build, so share them per rate pair.
class ResamplerBank {
public:
    static const SincResampler& get(int sr_in, int sr_out) {
        static ResamplerBank bank;
        std::lock_guard<std::mutex> lock(bank.mutex_);
        const auto key = (static_cast<std::uint64_t>(sr_in) << 32) |
                         static_cast<std::uint32_t>(sr_out);
        auto it = bank.cache_.find(key);
        if (it == bank.cache_.end())
            it = bank.cache_.emplace(key, std::make_unique<SincResampler>(sr_in, sr_out)).first;
        return *it->second;
    }

private:
    std::mutex mutex_;
    std::unordered_map<std::uint64_t, std::unique_ptr<SincResampler>> cache_;
};

inline void check_finite(const std::vector<float>& samples, const std::string& what) {
    for (float v : samples)
        if (!std::isfinite(v)) throw DataError("non-finite sample in " + what);
}

} // namespace detail

// Mono + resample to the target rate + pad/clip to the target length.
// Padding appends trailing zeros; clipping keeps the leading samples. A clip
// that is already normalized passes through bit-exactly.
inline AudioClip normalize_audio(std::vector<float> mono, int sample_rate,
                                 const NormalizeParams& params, const std::string& what) {
    if (mono.empty()) throw DataError("zero-length audio: " + what);
    detail::check_finite(mono, what);

    AudioClip clip;
    clip.original_duration = static_cast<double>(mono.size()) / sample_rate;
    if (sample_rate != params.target_sample_rate)
        mono = detail::ResamplerBank::get(sample_rate, params.target_sample_rate).process(mono);
    mono.resize(params.target_samples(), 0.0f);
    clip.samples = std::move(mono);
    clip.sample_rate = params.target_sample_rate;
    return clip;
}

inline AudioClip load_and_normalize(const ManifestEntry& entry, const NormalizeParams& params) {
    const WavData wav = read_wav(entry.path);
    AudioClip clip = normalize_audio(wav.mono(), wav.sample_rate, params, entry.path);
    clip.label = entry.label;
    clip.speaker_id = entry.speaker_id;
    clip.source_path = entry.path;
    return clip;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;
    std::string strategy;
};

namespace detail {

inline void check_ratios(const SplitRatios& r) {
    if (r.train < 0 || r.val < 0 || r.test < 0)
        throw ConfigError("split ratios must be nonnegative");
    if (std::fabs(r.train + r.val + r.test - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1");
    if (r.train <= 0 || r.val <= 0)
        throw ConfigError("degenerate split ratios: train and val must be nonzero "
                          "for training configs");
}

// Largest-remainder allocation of n entries over the three parts.
inline std::array<std::size_t, 3> allocate_parts(std::size_t n, const SplitRatios& r) {
    const std::array<double, 3> ratios = {r.train, r.val, r.test};
    std::array<std::size_t, 3> base{};
    std::array<double, 3> frac{};
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = n * ratios[static_cast<std::size_t>(k)];
        base[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(exact + 1e-12));
        frac[static_cast<std::size_t>(k)] = exact - std::floor(exact + 1e-12);
        used += base[static_cast<std::size_t>(k)];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[static_cast<std::size_t>(a)] >
                                                frac[static_cast<std::size_t>(b)]; });
    for (std::size_t left = n - used, i = 0; left > 0; --left, ++i)
        base[static_cast<std::size_t>(order[i % 3])] += 1;
    // Parts with a zero ratio must stay empty; reassign any rounding spill.
    for (int k = 2; k >= 0; --k) {
        if (ratios[static_cast<std::size_t>(k)] == 0.0 && base[static_cast<std::size_t>(k)] > 0) {
            base[0] += base[static_cast<std::size_t>(k)];
            base[static_cast<std::size_t>(k)] = 0;
        }
    }
    return base;
}

} // namespace detail

// Deterministic stratified split. Entries are grouped by label, shuffled with
// a per-label substream of `seed`, and allocated by largest remainder, so the
// result is a pure function of (manifest, ratios, seed).
inline DataSplit make_split(const CorpusManifest& manifest, const SplitRatios& ratios,
                            std::uint64_t seed, bool speaker_independent = false) {
    detail::check_ratios(ratios);
    if (manifest.entries.empty()) throw DataError("cannot split an empty manifest");

    const std::size_t parts = 2 + (ratios.test > 0 ? 1 : 0);
    DataSplit split;
    split.seed = seed;
    split.strategy = speaker_independent ? "speaker-independent" : "stratified";

    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        by_label[manifest.entries[i].label].push_back(i);

    if (!speaker_independent) {
        for (auto& [label, indices] : by_label) {
            if (indices.size() < parts)
                throw DataError("class '" + label + "' has " + std::to_string(indices.size()) +
                                " entries, fewer than " + std::to_string(parts) +
                                " split parts");
            Rng rng(mix_seed(seed, label));
            rng.shuffle(indices.begin(), indices.end());
            const auto alloc = detail::allocate_parts(indices.size(), ratios);
            std::size_t pos = 0;
            for (std::size_t k = 0; k < alloc[0]; ++k) split.train.push_back(indices[pos++]);
            for (std::size_t k = 0; k < alloc[1]; ++k) split.val.push_back(indices[pos++]);
            for (std::size_t k = 0; k < alloc[2]; ++k) split.test.push_back(indices[pos++]);
        }
    } else {
        // Whole speakers go to one part. Greedy largest-speaker-first into the
        // part with the biggest remaining deficit; exact per-label
        // stratification is not guaranteed in this mode.
        std::map<std::string, std::vector<std::size_t>> by_speaker;
        for (std::size_t i = 0; i < manifest.entries.size(); ++i)
            by_speaker[manifest.entries[i].speaker_id].push_back(i);
        if (by_speaker.size() < parts)
            throw DataError("only " + std::to_string(by_speaker.size()) +
                            " speakers, fewer than " + std::to_string(parts) + " split parts");

        std::vector<std::pair<std::string, std::vector<std::size_t>>> speakers(
            by_speaker.begin(), by_speaker.end());
        Rng rng(mix_seed(seed, "speakers"));
        rng.shuffle(speakers.begin(), speakers.end());
        std::stable_sort(speakers.begin(), speakers.end(),
                         [](const auto& a, const auto& b) {
                             return a.second.size() > b.second.size();
                         });

        const double total = static_cast<double>(manifest.entries.size());
        const std::array<double, 3> target = {ratios.train * total, ratios.val * total,
                                              ratios.test * total};
        std::array<double, 3> have{};
        std::array<std::vector<std::size_t>*, 3> dest = {&split.train, &split.val, &split.test};
        for (auto& [speaker, indices] : speakers) {
            int best = 0;
            double best_deficit = -1e300;
            for (int k = 0; k < 3; ++k) {
                if (target[static_cast<std::size_t>(k)] <= 0.0) continue;
                const double deficit = target[static_cast<std::size_t>(k)] -
                                       have[static_cast<std::size_t>(k)];
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    best = k;
                }
            }
            auto* d = dest[static_cast<std::size_t>(best)];
            d->insert(d->end(), indices.begin(), indices.end());
            have[static_cast<std::size_t>(best)] += static_cast<double>(indices.size());
        }
        if (split.train.empty() || split.val.empty() || (parts == 3 && split.test.empty()))
            throw DataError("speaker-independent split left a part empty; "
                            "not enough speakers for the requested ratios");
    }

    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

inline constexpr std::array<double, kNumClasses> kSynthFundamentalsHz = {200.0, 400.0, 800.0,
                                                                         1600.0, 3200.0};

// Writes n_per_class tone clips per emotion class under
// root/<label>/c<code>_s<speaker>_<index>.wav and returns the manifest.
// Byte-identical output for a fixed seed.
inline CorpusManifest synth_corpus(const fs::path& root, int n_per_class, std::uint64_t seed,
                                   int sample_rate = 16000) {
    if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
    const int n_speakers = std::min(10, kNumClasses * n_per_class);

    CorpusManifest manifest;
    int global_idx = 0;
    for (int cls = 0; cls < kNumClasses; ++cls) {
        const std::string label = class_names()[static_cast<std::size_t>(cls)];
        const fs::path dir = root / label;
        fs::create_directories(dir);
        for (int j = 0; j < n_per_class; ++j, ++global_idx) {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(global_idx)));
            const double duration = rng.uniform(1.0, 8.0);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double f0 = kSynthFundamentalsHz[static_cast<std::size_t>(cls)];
            const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));

            std::vector<float> samples(n);
            for (std::size_t t = 0; t < n; ++t) {
                const double x = 2.0 * M_PI * f0 * static_cast<double>(t) / sample_rate + phase;
                double v = 0.5 * std::sin(x) + 0.1 * std::sin(2.0 * x);
                v += 0.02 * rng.normal();
                samples[t] = static_cast<float>(v);
            }

            const int speaker = global_idx % n_speakers;
            char name[64];
            std::snprintf(name, sizeof(name), "c%d_s%02d_%03d.wav", cls, speaker, j);
            const fs::path file = dir / name;
            write_wav_pcm16(file, samples, sample_rate);

            ManifestEntry e;
            e.path = fs::absolute(file).string();
            e.label = label;
            char spk[16];
            std::snprintf(spk, sizeof(spk), "s%02d", speaker);
            e.speaker_id = spk;
            e.duration_seconds = static_cast<double>(n) / sample_rate;
            manifest.entries.push_back(std::move(e));
        }
    }
    validate_manifest(manifest);
    return manifest;
}

} // namespace ser
