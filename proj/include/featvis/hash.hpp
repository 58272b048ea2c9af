#pragma once

#include <filesystem>
#include <span>
#include <string>

namespace featvis {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

} // namespace featvis
