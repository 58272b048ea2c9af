#include "featvis/container.hpp"

#include "featvis/error.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

namespace featvis {

void write_container(const std::filesystem::path& path,
                     const nlohmann::json& header,
                     std::span<const float> payload) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const std::string text = header.dump();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.put('\n');
    std::vector<char> bytes;
    bytes.reserve(payload.size() * 4);
    for (float f : payload) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int shift = 0; shift < 32; shift += 8) bytes.push_back(static_cast<char>((bits >> shift) & 0xffu));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": missing header line");
    Container result;
    try {
        result.header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed header: " + e.what());
    }
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() % 4 != 0) throw IoError(path.string() + ": payload is not a whole number of float32 values");
    result.payload.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < result.payload.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        result.payload[i] = std::bit_cast<float>(bits);
    }
    return result;
}

void append_f32(std::vector<float>& out, std::span<const double> values) {
    out.reserve(out.size() + values.size());
    for (double v : values) out.push_back(static_cast<float>(v));
}

} // namespace featvis
