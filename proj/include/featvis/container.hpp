#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace featvis {

/// Shared layout of `.fvm` and `.fvf` files: a single-line JSON header
/// terminated by '\n', then a raw little-endian float32 payload.
struct Container {
    nlohmann::json header;
    std::vector<float> payload;
};

void write_container(const std::filesystem::path& path,
                     const nlohmann::json& header,
                     std::span<const float> payload);

Container read_container(const std::filesystem::path& path);

/// Appends `values` narrowed to float32.
void append_f32(std::vector<float>& out, std::span<const double> values);

} // namespace featvis
