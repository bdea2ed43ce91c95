#pragma once

#include <cmath>
#include <vector>

#include "mh2f/autodiff.hpp"
#include "mh2f/errors.hpp"
#include "mh2f/tensor.hpp"

namespace mh2f {

// Standard SSIM constants; window is an isotropic Gaussian.
struct SsimParams {
  int window_size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

struct LossBreakdown {
  double l1 = 0;
  double ssim_loss = 0;
  double total = 0;
  double lambda = 0.2;
};

inline void validate_ssim_params(const SsimParams& p) {
  if (p.window_size < 3 || p.window_size % 2 == 0)
    throw precondition_error("ssim: window_size must be odd and >= 3");
  if (!(p.sigma > 0)) throw precondition_error("ssim: sigma must be > 0");
}

template <typename T>
std::vector<T> gaussian_window_1d(int size, double sigma) {
  std::vector<T> k(size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    const double v = std::exp(-(d * d) / (2.0 * sigma * sigma));
    k[i] = static_cast<T>(v);
    sum += v;
  }
  for (T& v : k) v = static_cast<T>(static_cast<double>(v) / sum);
  return k;
}

// Separable Gaussian blur with valid padding: vertical then horizontal pass.
template <typename T>
int emit_gauss_blur(Tape<T>& t, int x, const std::vector<T>& k1d) {
  const int k = static_cast<int>(k1d.size());
  Tensor<T> col({1, 1, k, 1});
  Tensor<T> row({1, 1, 1, k});
  for (int i = 0; i < k; ++i) {
    col.data[i] = k1d[i];
    row.data[i] = k1d[i];
  }
  return t.depthwise_valid(t.depthwise_valid(x, std::move(col)), std::move(row));
}

// Mean absolute difference over all elements.
template <typename T>
int emit_l1(Tape<T>& t, int r, int gt) {
  return t.mean_all(t.abs_(t.sub(r, gt)));
}

// Mean of the local SSIM map over all valid window positions and channels.
template <typename T>
int emit_ssim_index(Tape<T>& t, int r, int gt, const SsimParams& p = {}) {
  validate_ssim_params(p);
  const Shape s = t.val(r).shape;
  if (!(s == t.val(gt).shape))
    throw precondition_error("ssim: shape mismatch " + s.str() + " vs " +
                             t.val(gt).shape.str());
  if (s.h < p.window_size || s.w < p.window_size)
    throw precondition_error("ssim: image " + s.str() + " smaller than window " +
                             std::to_string(p.window_size));
  const auto k = gaussian_window_1d<T>(p.window_size, p.sigma);
  const T c1 = static_cast<T>(p.k1 * p.data_range * p.k1 * p.data_range);
  const T c2 = static_cast<T>(p.k2 * p.data_range * p.k2 * p.data_range);

  const int mu_x = emit_gauss_blur(t, r, k);
  const int mu_y = emit_gauss_blur(t, gt, k);
  const int mu_xx = t.mul(mu_x, mu_x);
  const int mu_yy = t.mul(mu_y, mu_y);
  const int mu_xy = t.mul(mu_x, mu_y);
  const int var_x = t.sub(emit_gauss_blur(t, t.mul(r, r), k), mu_xx);
  const int var_y = t.sub(emit_gauss_blur(t, t.mul(gt, gt), k), mu_yy);
  const int cov = t.sub(emit_gauss_blur(t, t.mul(r, gt), k), mu_xy);

  const int num = t.mul(t.add_scalar(t.mul_scalar(mu_xy, T(2)), c1),
                        t.add_scalar(t.mul_scalar(cov, T(2)), c2));
  const int den = t.mul(t.add_scalar(t.add(mu_xx, mu_yy), c1),
                        t.add_scalar(t.add(var_x, var_y), c2));
  return t.mean_all(t.divide(num, den));
}

template <typename T>
int emit_ssim_loss(Tape<T>& t, int r, int gt, const SsimParams& p = {}) {
  return t.add_scalar(t.mul_scalar(emit_ssim_index(t, r, gt, p), T(-1)), T(1));
}

template <typename T>
struct HybridIds {
  int total, l1, ssim_loss;
};

template <typename T>
HybridIds<T> emit_hybrid(Tape<T>& t, int r, int gt, T lambda, const SsimParams& p = {}) {
  HybridIds<T> ids;
  ids.l1 = emit_l1(t, r, gt);
  ids.ssim_loss = emit_ssim_loss(t, r, gt, p);
  ids.total = t.add(ids.l1, t.mul_scalar(ids.ssim_loss, lambda));
  return ids;
}

// ---- value-level losses (double precision) -----------------------------------

inline double l1_loss(const TensorD& r, const TensorD& gt) {
  if (!(r.shape == gt.shape))
    throw precondition_error("l1_loss: shape mismatch " + r.shape.str() + " vs " +
                             gt.shape.str());
  Tape<double> t;
  return t.val(emit_l1(t, t.leaf(r), t.leaf(gt))).data[0];
}

inline double ssim_index(const TensorD& r, const TensorD& gt, const SsimParams& p = {}) {
  Tape<double> t;
  return t.val(emit_ssim_index(t, t.leaf(r), t.leaf(gt), p)).data[0];
}

inline double ssim_loss(const TensorD& r, const TensorD& gt, const SsimParams& p = {}) {
  return 1.0 - ssim_index(r, gt, p);
}

inline LossBreakdown hybrid_loss(const TensorD& r, const TensorD& gt, double lambda = 0.2,
                                 const SsimParams& p = {}) {
  if (lambda < 0) throw precondition_error("hybrid_loss: lambda must be >= 0");
  LossBreakdown b;
  b.lambda = lambda;
  b.l1 = l1_loss(r, gt);
  b.ssim_loss = ssim_loss(r, gt, p);
  b.total = b.l1 + lambda * b.ssim_loss;
  return b;
}

inline double l1_loss(const TensorF& r, const TensorF& gt) {
  return l1_loss(cast<double>(r), cast<double>(gt));
}
inline double ssim_index(const TensorF& r, const TensorF& gt, const SsimParams& p = {}) {
  return ssim_index(cast<double>(r), cast<double>(gt), p);
}
inline double ssim_loss(const TensorF& r, const TensorF& gt, const SsimParams& p = {}) {
  return ssim_loss(cast<double>(r), cast<double>(gt), p);
}
inline LossBreakdown hybrid_loss(const TensorF& r, const TensorF& gt, double lambda = 0.2,
                                 const SsimParams& p = {}) {
  return hybrid_loss(cast<double>(r), cast<double>(gt), lambda, p);
}

}  // namespace mh2f
