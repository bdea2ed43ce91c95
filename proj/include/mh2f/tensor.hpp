#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mh2f/errors.hpp"

namespace mh2f {

// Dimensions of a 4-D activation (batch, channels, height, width). Convolution
// kernels reuse the same struct as (out_channels, in_channels, kh, kw).
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  [[nodiscard]] std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
};

template <typename T>
struct Tensor {
  Shape shape{};
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(s), data(s.numel(), fill) {}

  static Tensor zeros(Shape s) { return Tensor(s); }

  [[nodiscard]] std::size_t numel() const { return data.size(); }
  [[nodiscard]] bool empty() const { return data.empty(); }

  [[nodiscard]] std::size_t idx(int n_, int c_, int h_, int w_) const {
    return ((static_cast<std::size_t>(n_) * shape.c + c_) * shape.h + h_) * shape.w + w_;
  }
  T& at(int n_, int c_, int h_, int w_) { return data[idx(n_, c_, h_, w_)]; }
  const T& at(int n_, int c_, int h_, int w_) const { return data[idx(n_, c_, h_, w_)]; }

  // pointer to the start of one (batch, channel) plane
  T* plane(int n_, int c_) {
    return data.data() + (static_cast<std::size_t>(n_) * shape.c + c_) *
                             (static_cast<std::size_t>(shape.h) * shape.w);
  }
  const T* plane(int n_, int c_) const {
    return data.data() + (static_cast<std::size_t>(n_) * shape.c + c_) *
                             (static_cast<std::size_t>(shape.h) * shape.w);
  }

  [[nodiscard]] bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void fill(T v) {
    for (T& x : data) x = v;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

// Images are (n, 3, h, w) with finite values in [0, 1].
template <typename T>
void validate_image_range(const Tensor<T>& img, const char* what) {
  if (img.shape.c != 3)
    throw precondition_error(std::string(what) + ": expected 3 channels, got shape " +
                             img.shape.str());
  for (const T& v : img.data) {
    if (!std::isfinite(static_cast<double>(v)) || v < T{0} || v > T{1})
      throw precondition_error(std::string(what) +
                               ": image values must be finite and within [0,1]");
  }
}

// Model inputs additionally need both spatial dims >= 8 and divisible by 4
// (the hourglass halves the resolution twice).
template <typename T>
void validate_model_input(const Tensor<T>& img) {
  validate_image_range(img, "model input");
  if (img.shape.h < 8 || img.shape.w < 8 || img.shape.h % 4 != 0 || img.shape.w % 4 != 0)
    throw precondition_error("model input: spatial dims must be >= 8 and divisible by 4, got " +
                             img.shape.str());
}

template <typename T>
Tensor<T> clamp01(Tensor<T> t) {
  for (T& v : t.data) v = v < T{0} ? T{0} : (v > T{1} ? T{1} : v);
  return t;
}

}  // namespace mh2f
