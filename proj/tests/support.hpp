#pragma once

#include "featvis/rng.hpp"
#include "featvis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

namespace testing {

inline featvis::ImageTensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    featvis::Rng rng(seed);
    featvis::ImageTensor img(h, w);
    for (double& v : img.data.values()) v = rng.uniform();
    return img;
}

inline featvis::Tensor3 random_tensor(featvis::Shape3 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    featvis::Rng rng(seed);
    featvis::Tensor3 t(s);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline double dot(const featvis::Tensor3& a, const featvis::Tensor3& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.raw()[i] * b.raw()[i];
    return s;
}

// Central difference of f at x with step h.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// |a - b| <= rtol * max(|a|, |b|) + atol
inline bool close(double a, double b, double rtol, double atol = 0.0) {
    return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("featvis_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

} // namespace testing
