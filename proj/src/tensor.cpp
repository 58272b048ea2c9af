#include "featvis/tensor.hpp"

#include "featvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace featvis {

std::string to_string(const Shape3& s) {
    return fmt::format("{}x{}x{}", s.channels, s.height, s.width);
}

Tensor3::Tensor3(Shape3 shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor3::Tensor3(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
        throw ValidationError(fmt::format("tensor data has {} values, shape {} needs {}",
                                          data_.size(), to_string(shape_), shape_.size()));
    }
}

bool Tensor3::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor3& Tensor3::operator+=(const Tensor3& other) {
    require_same_shape(shape_, other.shape_, "tensor add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor3& Tensor3::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

void require_finite(const Tensor3& t, const std::string& what) {
    if (!t.all_finite()) throw ValidationError(what + " contains non-finite values");
}

void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what) {
    if (!(a == b)) {
        throw ValidationError(
            fmt::format("{}: shape mismatch ({} vs {})", what, to_string(a), to_string(b)));
    }
}

} // namespace featvis
