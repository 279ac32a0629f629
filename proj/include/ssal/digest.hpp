#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace ssal {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

// Seed fan-out: every stream used by a run derives from one master seed
// through splitmix64 over (master, stream tag).
enum class SeedStream : std::uint64_t { data = 1, init = 2, shuffle = 3, tie_break = 4, holdout = 5, combiner = 6 };

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0);

}  // namespace ssal
