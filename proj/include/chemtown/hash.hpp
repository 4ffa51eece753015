#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace chemtown::hash {

/// 64-bit FNV-1a. Stable across platforms; used for embedding buckets and content digests.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t value);

/// Hex digest of a string.
std::string digest(std::string_view data);

/// Hex digest of a file's bytes. Throws InputError if unreadable.
std::string digest_file(const std::filesystem::path& path);

} // namespace chemtown::hash
