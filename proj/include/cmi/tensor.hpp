#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmi/errors.hpp"

namespace cmi {

struct Shape3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    constexpr std::size_t size() const { return channels * height * width; }
    friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Dense channels x height x width array of doubles, row-major.
// Used for gradients, momentum buffers and as the storage of ImageTensor.
class Tensor3 {
  public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
    Tensor3(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ShapeMismatchError("tensor data has " + std::to_string(data_.size()) + " values, shape " +
                                     to_string(shape_) + " needs " + std::to_string(shape_.size()));
        }
    }

    const Shape3& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }
    double operator()(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_.height + y) * shape_.width + x];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    Tensor3& operator+=(const Tensor3& other) {
        require_same_shape(*this, other, "tensor add");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }
    Tensor3& operator*=(double s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

    static void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
        if (a.shape_ != b.shape_) {
            throw ShapeMismatchError(std::string(what) + ": shape " + to_string(a.shape_) + " vs " +
                                     to_string(b.shape_));
        }
    }

  private:
    Shape3 shape_;
    std::vector<double> data_;
};

inline Tensor3 operator*(double s, Tensor3 t) { return t *= s; }

inline double l1_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

inline double linf_distance(const Tensor3& a, const Tensor3& b) {
    Tensor3::require_same_shape(a, b, "linf distance");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Image with every pixel in [0, 1]. Construction validates; the tensor is
// immutable afterwards, so the range invariant cannot be broken.
class ImageTensor {
  public:
    ImageTensor() = default;
    explicit ImageTensor(Tensor3 pixels) : pixels_(std::move(pixels)) {
        for (double v : pixels_.values()) {
            if (!std::isfinite(v)) throw InvalidInputError("image contains a non-finite pixel");
            if (v < 0.0 || v > 1.0) throw InvalidInputError("image pixel outside [0,1]: " + std::to_string(v));
        }
    }
    ImageTensor(Shape3 shape, std::vector<double> data) : ImageTensor(Tensor3(shape, std::move(data))) {}

    // Clamps into [0,1] instead of rejecting; for results of convex
    // combinations that can drift by an ulp.
    static ImageTensor clamped(Tensor3 pixels) {
        for (auto& v : pixels.values()) {
            if (!std::isfinite(v)) throw InvalidInputError("image contains a non-finite pixel");
            v = std::clamp(v, 0.0, 1.0);
        }
        ImageTensor out;
        out.pixels_ = std::move(pixels);
        return out;
    }

    const Tensor3& tensor() const { return pixels_; }
    const Shape3& shape() const { return pixels_.shape(); }
    std::size_t size() const { return pixels_.size(); }
    double operator[](std::size_t i) const { return pixels_[i]; }
    std::span<const double> values() const { return pixels_.values(); }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

  private:
    Tensor3 pixels_;
};

using EmbeddingVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

} // namespace cmi
