#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>
#include <zlib.h>

#include "ser/errors.hpp"

namespace ser {

namespace fs = std::filesystem;

inline std::uint32_t crc32_of(const void* data, std::size_t len, std::uint32_t seed = 0) {
    return static_cast<std::uint32_t>(
        ::crc32(seed, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

// Write-to-temp then rename. Rename within one directory is atomic on POSIX,
// which is what makes concurrent cache writers safe.
inline void atomic_write_bytes(const fs::path& path, const void* data, std::size_t len) {
    static std::atomic<std::uint64_t> counter{0};
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    const auto tmp = path.string() + ".tmp." + std::to_string(::getpid()) + "." +
                     std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (!out) throw IoError("short write: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename failed for " + path.string() + ": " + ec.message());
    }
}

inline void atomic_write_text(const fs::path& path, const std::string& text) {
    atomic_write_bytes(path, text.data(), text.size());
}

} // namespace ser
