#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace plab {

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
/// Hex SHA-256 of a file's contents. Throws IoFailure if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Named sub-seed derivation: every pipeline stage gets
/// derive_seed(master, "<stage>") so one number reproduces a whole run.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

}  // namespace plab
