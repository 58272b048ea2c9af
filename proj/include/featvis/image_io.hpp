#pragma once

#include "featvis/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace featvis {

/// 8-bit RGB raster, row-major, interleaved.
struct Rgb8Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    Rgb8Image() = default;
    Rgb8Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

    std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }
    bool operator==(const Rgb8Image&) const = default;
};

/// Values are clamped to [0, 1] and rounded to the nearest 8-bit level.
Rgb8Image to_rgb8(const ImageTensor& image);
ImageTensor from_rgb8(const Rgb8Image& image);

/// Deterministic PNG encoder (no timestamps or text chunks).
void write_png(const std::filesystem::path& path, const Rgb8Image& image);
/// Accepts any PNG libpng decodes; output is always 8-bit RGB. Throws IoError.
Rgb8Image read_png(const std::filesystem::path& path);

/// Bilinear resampling to the requested size.
Rgb8Image resize_bilinear(const Rgb8Image& image, std::size_t width, std::size_t height);

} // namespace featvis
