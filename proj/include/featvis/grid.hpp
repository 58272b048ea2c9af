#pragma once

#include "featvis/image_io.hpp"

#include <string>
#include <vector>

namespace featvis {

enum class GridOrder { input, facet, top_k, iteration };

GridOrder parse_grid_order(const std::string& name);

struct GridSpec {
    /// Edge length of each cell in pixels; 0 keeps the native image size.
    std::size_t cell_size = 0;
    std::size_t columns = 5;
    bool labels = false;
    GridOrder order = GridOrder::input;
    /// Gap between neighbouring cells.
    std::size_t padding = 2;
    /// Resample cells of differing resolution instead of failing.
    bool resize = false;

    void validate() const;
};

struct GridCell {
    Rgb8Image image;
    std::string label;
};

constexpr std::size_t kLabelStripHeight = 9;

/// Tiles cells row-major. Without `resize`, every cell must share one size.
Rgb8Image render_grid(const std::vector<GridCell>& cells, const GridSpec& spec);

/// Draws upper-cased `text` with a 3x5 bitmap font; unknown glyphs render blank.
void draw_text(Rgb8Image& image, std::size_t x, std::size_t y, const std::string& text, std::uint8_t shade);

} // namespace featvis
