#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ser/errors.hpp"

namespace ser {

namespace fs = std::filesystem;

struct WavData {
    int sample_rate = 0;
    int channels = 0;
    std::vector<float> samples; // interleaved

    std::size_t frames() const { return channels ? samples.size() / channels : 0; }
    double duration_seconds() const {
        return sample_rate ? static_cast<double>(frames()) / sample_rate : 0.0;
    }

    // Channel-averaged mono view.
    std::vector<float> mono() const {
        if (channels <= 1) return samples;
        std::vector<float> out(frames());
        for (std::size_t f = 0; f < out.size(); ++f) {
            float acc = 0.0f;
            for (int c = 0; c < channels; ++c) acc += samples[f * channels + c];
            out[f] = acc / static_cast<float>(channels);
        }
        return out;
    }
};

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}
inline void wr_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace detail

// RIFF/WAVE reader covering the encodings that occur in practice for speech
// corpora: PCM 16/24/32-bit and IEEE float32, any channel count and rate.
// Walks chunks rather than assuming the canonical 44-byte layout.
inline WavData read_wav(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open audio file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DataError("not a RIFF/WAVE file: " + path.string());

    int channels = 0, sample_rate = 0, bits = 0, format = 0;
    const unsigned char* data_ptr = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t len = detail::rd_u32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + len > bytes.size())
            throw DataError("truncated chunk in " + path.string());
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw DataError("malformed fmt chunk in " + path.string());
            format = detail::rd_u16(bytes.data() + body);
            channels = detail::rd_u16(bytes.data() + body + 2);
            sample_rate = static_cast<int>(detail::rd_u32(bytes.data() + body + 4));
            bits = detail::rd_u16(bytes.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_len = len;
        }
        pos = body + len + (len & 1); // chunks are word-aligned
    }

    if (!data_ptr) throw DataError("no data chunk in " + path.string());
    if (channels <= 0 || sample_rate <= 0)
        throw DataError("malformed fmt chunk in " + path.string());
    if (format != 1 && format != 3)
        throw DataError("unsupported WAV format tag " + std::to_string(format) + " in " +
                        path.string());

    WavData wav;
    wav.sample_rate = sample_rate;
    wav.channels = channels;

    if (format == 3) {
        if (bits != 32) throw DataError("unsupported float bit depth in " + path.string());
        const std::size_t n = data_len / 4;
        wav.samples.resize(n);
        std::memcpy(wav.samples.data(), data_ptr, n * 4);
    } else if (bits == 16) {
        const std::size_t n = data_len / 2;
        wav.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int16_t v = static_cast<std::int16_t>(detail::rd_u16(data_ptr + 2 * i));
            wav.samples[i] = static_cast<float>(v) / 32768.0f;
        }
    } else if (bits == 24) {
        const std::size_t n = data_len / 3;
        wav.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* p = data_ptr + 3 * i;
            std::int32_t v = (p[0] << 8) | (p[1] << 16) |
                             (static_cast<std::int32_t>(static_cast<std::int8_t>(p[2])) << 24);
            wav.samples[i] = static_cast<float>(v) / 2147483648.0f;
        }
    } else if (bits == 32) {
        const std::size_t n = data_len / 4;
        wav.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::int32_t v;
            std::memcpy(&v, data_ptr + 4 * i, 4);
            wav.samples[i] = static_cast<float>(v) / 2147483648.0f;
        }
    } else {
        throw DataError("unsupported PCM bit depth " + std::to_string(bits) + " in " +
                        path.string());
    }

    if (wav.samples.empty()) throw DataError("zero-length audio: " + path.string());
    return wav;
}

inline std::string encode_wav_pcm16(const std::vector<float>& mono, int sample_rate) {
    std::string out;
    const std::uint32_t n = static_cast<std::uint32_t>(mono.size());
    const std::uint32_t data_bytes = n * 2;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    detail::wr_u32(out, 36 + data_bytes);
    out.append("WAVEfmt ");
    detail::wr_u32(out, 16);
    detail::wr_u16(out, 1); // PCM
    detail::wr_u16(out, 1); // mono
    detail::wr_u32(out, static_cast<std::uint32_t>(sample_rate));
    detail::wr_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
    detail::wr_u16(out, 2);
    detail::wr_u16(out, 16);
    out.append("data");
    detail::wr_u32(out, data_bytes);
    for (float v : mono) {
        // Symmetric 1/32768 quantization step, the inverse of the decoder.
        int s = static_cast<int>(std::lrintf(v * 32768.0f));
        if (s < -32768) s = -32768;
        if (s > 32767) s = 32767;
        detail::wr_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
    }
    return out;
}

inline void write_wav_pcm16(const fs::path& path, const std::vector<float>& mono,
                            int sample_rate) {
    const std::string bytes = encode_wav_pcm16(mono, sample_rate);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

} // namespace ser
