#include "featvis/grid.hpp"

#include "featvis/error.hpp"

#include <algorithm>
#include <cctype>
#include <fmt/format.h>
#include <map>

namespace featvis {

GridOrder parse_grid_order(const std::string& name) {
    if (name == "input") return GridOrder::input;
    if (name == "facet") return GridOrder::facet;
    if (name == "k") return GridOrder::top_k;
    if (name == "iteration") return GridOrder::iteration;
    throw ConfigError(fmt::format("unknown grid ordering '{}' (expected input, facet, k or iteration)", name));
}

void GridSpec::validate() const {
    if (columns < 1) throw ConfigError("grid needs at least one column");
    if (cell_size != 0 && cell_size < 16) throw ConfigError(fmt::format("cell size must be >= 16, got {}", cell_size));
}

namespace {

// 3x5 glyphs, rows top to bottom.
const std::map<char, const char*>& font() {
    static const std::map<char, const char*> glyphs{
        {'0', "111101101101111"}, {'1', "010110010010111"}, {'2', "111001111100111"}, {'3', "111001111001111"},
        {'4', "101101111001001"}, {'5', "111100111001111"}, {'6', "111100111101111"}, {'7', "111001001001001"},
        {'8', "111101111101111"}, {'9', "111101111001111"}, {'A', "010101111101101"}, {'B', "110101110101110"},
        {'C', "011100100100011"}, {'D', "110101101101110"}, {'E', "111100110100111"}, {'F', "111100110100100"},
        {'G', "011100101101011"}, {'H', "101101111101101"}, {'I', "111010010010111"}, {'J', "001001001101010"},
        {'K', "101101110101101"}, {'L', "100100100100111"}, {'M', "101111111101101"}, {'N', "110101101101101"},
        {'O', "010101101101010"}, {'P', "110101110100100"}, {'Q', "010101101110011"}, {'R', "110101110101101"},
        {'S', "011100010001110"}, {'T', "111010010010010"}, {'U', "101101101101111"}, {'V', "101101101101010"},
        {'W', "101101111111101"}, {'X', "101101010101101"}, {'Y', "101101010010010"}, {'Z', "111001010100111"},
        {'.', "000000000000010"}, {'_', "000000000000111"}, {'-', "000000111000000"}, {'=', "000111000111000"},
        {':', "000010000010000"},
    };
    return glyphs;
}

} // namespace

void draw_text(Rgb8Image& image, std::size_t x, std::size_t y, const std::string& text, std::uint8_t shade) {
    std::size_t pen = x;
    for (char raw : text) {
        if (pen + 3 > image.width) break;
        const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        if (const auto it = font().find(ch); it != font().end()) {
            for (std::size_t row = 0; row < 5; ++row) {
                for (std::size_t col = 0; col < 3; ++col) {
                    if (it->second[row * 3 + col] != '1' || y + row >= image.height) continue;
                    std::uint8_t* px = image.at(pen + col, y + row);
                    px[0] = px[1] = px[2] = shade;
                }
            }
        }
        pen += 4;
    }
}

Rgb8Image render_grid(const std::vector<GridCell>& cells, const GridSpec& spec) {
    spec.validate();
    if (cells.empty()) throw ValidationError("grid needs at least one image");
    std::size_t cw = cells.front().image.width;
    std::size_t ch = cells.front().image.height;
    if (spec.cell_size != 0) {
        cw = ch = spec.cell_size;
    }
    for (const auto& cell : cells) {
        const bool fits = cell.image.width == cw && cell.image.height == ch;
        if (!fits && !spec.resize) {
            throw ValidationError(fmt::format("cell of size {}x{} differs from {}x{}; pass --resize to resample",
                                              cell.image.width, cell.image.height, cw, ch));
        }
    }
    const std::size_t cols = std::min(spec.columns, cells.size());
    const std::size_t rows = (cells.size() + cols - 1) / cols;
    const std::size_t strip = spec.labels ? kLabelStripHeight : 0;
    const std::size_t pitch_x = cw + spec.padding;
    const std::size_t pitch_y = ch + strip + spec.padding;
    Rgb8Image grid(cols * pitch_x - spec.padding, rows * pitch_y - spec.padding, 255);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::size_t ox = (i % cols) * pitch_x;
        const std::size_t oy = (i / cols) * pitch_y;
        const Rgb8Image img = resize_bilinear(cells[i].image, cw, ch);
        for (std::size_t y = 0; y < ch; ++y) {
            std::copy_n(img.at(0, y), cw * 3, grid.at(ox, oy + y));
        }
        if (spec.labels) draw_text(grid, ox + 1, oy + ch + 2, cells[i].label, 0);
    }
    return grid;
}

} // namespace featvis
