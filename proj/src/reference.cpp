#include "mh2f/reference.hpp"

#include <cmath>
#include <vector>

#include "mh2f/errors.hpp"

namespace mh2f::reference {

double ssim_naive(const TensorD& a, const TensorD& b, const SsimParams& p) {
  validate_ssim_params(p);
  if (!(a.shape == b.shape))
    throw precondition_error("ssim_naive: shape mismatch");
  const int win = p.window_size;
  if (a.shape.h < win || a.shape.w < win)
    throw precondition_error("ssim_naive: image smaller than window");

  // 2-D Gaussian window built directly
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  const double c = (win - 1) / 2.0;
  double gsum = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      g[static_cast<std::size_t>(i) * win + j] = std::exp(-d2 / (2.0 * p.sigma * p.sigma));
      gsum += g[static_cast<std::size_t>(i) * win + j];
    }
  for (double& v : g) v /= gsum;

  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);

  double total = 0;
  std::size_t count = 0;
  for (int n = 0; n < a.shape.n; ++n)
    for (int ch = 0; ch < a.shape.c; ++ch) {
      const double* ap = a.plane(n, ch);
      const double* bp = b.plane(n, ch);
      const int W = a.shape.w;
      for (int top = 0; top + win <= a.shape.h; ++top)
        for (int left = 0; left + win <= a.shape.w; ++left) {
          double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              const double wv = g[static_cast<std::size_t>(i) * win + j];
              const double x = ap[(top + i) * W + left + j];
              const double y = bp[(top + i) * W + left + j];
              mx += wv * x;
              my += wv * y;
              mxx += wv * x * x;
              myy += wv * y * y;
              mxy += wv * x * y;
            }
          const double vx = mxx - mx * mx;
          const double vy = myy - my * my;
          const double cxy = mxy - mx * my;
          const double num = (2 * mx * my + c1) * (2 * cxy + c2);
          const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
          total += num / den;
          ++count;
        }
    }
  return total / static_cast<double>(count);
}

}  // namespace mh2f::reference
