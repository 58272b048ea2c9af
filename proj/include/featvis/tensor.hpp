#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace featvis {

struct Shape3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const noexcept { return channels * height * width; }
    std::size_t plane() const noexcept { return height * width; }
    bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& s);

/// Dense channel-major (C, H, W) array of doubles.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, double fill = 0.0);
    Tensor3(Shape3 shape, std::vector<double> data);

    const Shape3& shape() const noexcept { return shape_; }
    std::size_t channels() const noexcept { return shape_.channels; }
    std::size_t height() const noexcept { return shape_.height; }
    std::size_t width() const noexcept { return shape_.width; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }
    double operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }

    std::span<double> channel(std::size_t c) noexcept {
        return {data_.data() + c * shape_.plane(), shape_.plane()};
    }
    std::span<const double> channel(std::size_t c) const noexcept {
        return {data_.data() + c * shape_.plane(), shape_.plane()};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& raw() noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    bool all_finite() const noexcept;

    Tensor3& operator+=(const Tensor3& other);
    Tensor3& operator*=(double s) noexcept;

    bool operator==(const Tensor3&) const = default;

private:
    Shape3 shape_{};
    std::vector<double> data_;
};

/// RGB image in [0, 1], shape (3, H, W).
struct ImageTensor {
    Tensor3 data;

    ImageTensor() = default;
    explicit ImageTensor(Tensor3 t) : data(std::move(t)) {}
    ImageTensor(std::size_t height, std::size_t width, double fill = 0.0)
        : data(Shape3{3, height, width}, fill) {}

    std::size_t height() const noexcept { return data.height(); }
    std::size_t width() const noexcept { return data.width(); }
    bool operator==(const ImageTensor&) const = default;
};

/// Feature map produced by one layer.
struct ActivationTensor {
    Tensor3 data;
    std::string layer_id;

    bool operator==(const ActivationTensor&) const = default;
};

/// Throws ValidationError naming `what` if any entry is NaN or infinite.
void require_finite(const Tensor3& t, const std::string& what);

/// Throws ValidationError if the shapes differ.
void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what);

} // namespace featvis
