#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mh2f/errors.hpp"
#include "mh2f/tensor.hpp"

// Reverse-mode autodiff over 4-D tensors, define-by-run. Every op records a
// backward closure; Tape::backward walks the nodes in reverse creation order.
// All loops accumulate in a fixed order and parallel regions write disjoint
// output slices, so results are bit-identical across runs and thread counts.

namespace mh2f {

template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<T> value;
    std::vector<int> parents;
    BackFn back;           // empty for leaves
    std::vector<int> arg;  // argmax bookkeeping for max-reductions
    std::string label;
    bool requires_grad = false;
  };

  int leaf(Tensor<T> v, bool requires_grad = false, std::string label = {}) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int i) const { return nodes_[i].value; }
  const Tensor<T>& grad(int i) const { return grads_[i]; }
  bool has_grad(int i) const {
    return i < static_cast<int>(grads_.size()) && !grads_[i].empty();
  }
  std::size_t size() const { return nodes_.size(); }
  const std::string& label(int i) const { return nodes_[i].label; }
  void set_label(int i, std::string s) { nodes_[i].label = std::move(s); }

  // index of the first node whose value contains a non-finite entry, or -1
  int first_non_finite() const {
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
      if (!nodes_[i].value.all_finite()) return i;
    return -1;
  }

  // ---- convolution ----------------------------------------------------

  // x: (N,IC,H,W), w: (OC,IC,KH,KW), b: (1,OC,1,1) or -1 for none; stride 1.
  int conv2d(int x, int w, int b, int pad) {
    const Shape xs = nodes_[x].value.shape;
    const Shape ws = nodes_[w].value.shape;
    if (xs.c != ws.c)
      throw config_error("conv2d: input has " + std::to_string(xs.c) +
                         " channels but kernel expects " + std::to_string(ws.c));
    const int oh = xs.h + 2 * pad - ws.h + 1;
    const int ow = xs.w + 2 * pad - ws.w + 1;
    if (oh < 1 || ow < 1)
      throw precondition_error("conv2d: kernel " + ws.str() + " larger than padded input " +
                               xs.str());
    Tensor<T> y({xs.n, ws.n, oh, ow});
    conv_forward(nodes_[x].value, nodes_[w].value, b >= 0 ? &nodes_[b].value : nullptr, pad, y);
    std::vector<int> parents{x, w};
    if (b >= 0) parents.push_back(b);
    return make(std::move(y), std::move(parents), [x, w, b, pad](Tape& t, int self) {
      const Tensor<T>& gy = t.grads_[self];
      if (t.nodes_[x].requires_grad)
        conv_backward_input(gy, t.nodes_[w].value, pad, t.ensure_grad(x));
      if (t.nodes_[w].requires_grad)
        conv_backward_weight(gy, t.nodes_[x].value, pad, t.ensure_grad(w));
      if (b >= 0 && t.nodes_[b].requires_grad) conv_backward_bias(gy, t.ensure_grad(b));
    });
  }

  // depthwise correlation with a fixed (non-learnable) kernel, valid padding;
  // kernel shape (1,1,KH,KW). Used for the Gaussian windows of SSIM.
  int depthwise_valid(int x, Tensor<T> kernel) {
    const Shape xs = nodes_[x].value.shape;
    const int kh = kernel.shape.h, kw = kernel.shape.w;
    if (xs.h < kh || xs.w < kw)
      throw precondition_error("depthwise_valid: input " + xs.str() + " smaller than window " +
                               std::to_string(kh) + "x" + std::to_string(kw));
    Tensor<T> y({xs.n, xs.c, xs.h - kh + 1, xs.w - kw + 1});
    const Shape ys = y.shape;
    const Tensor<T>& xv = nodes_[x].value;
    const long long dwork = static_cast<long long>(xs.n) * xs.c * kh * kw * ys.h * ys.w;
#pragma omp parallel for collapse(2) schedule(static) if (dwork > 200000)
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        T* yp = y.plane(n, c);
        for (int i = 0; i < ys.h; ++i)
          for (int j = 0; j < ys.w; ++j) {
            T acc = 0;
            for (int a = 0; a < kh; ++a) {
              const T* xr = xp + (i + a) * xs.w + j;
              const T* kr = kernel.data.data() + a * kw;
              for (int bb = 0; bb < kw; ++bb) acc += kr[bb] * xr[bb];
            }
            yp[i * ys.w + j] = acc;
          }
      }
    auto k = std::make_shared<Tensor<T>>(std::move(kernel));
    return make(std::move(y), {x}, [x, k](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& gy = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape ys = gy.shape, xs = gx.shape;
      const int kh = k->shape.h, kw = k->shape.w;
      const long long dwork = static_cast<long long>(xs.n) * xs.c * kh * kw * ys.h * ys.w;
#pragma omp parallel for collapse(2) schedule(static) if (dwork > 200000)
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          T* gxp = gx.plane(n, c);
          const T* gyp = gy.plane(n, c);
          for (int i = 0; i < ys.h; ++i)
            for (int a = 0; a < kh; ++a) {
              const T* kr = k->data.data() + a * kw;
              T* gxr = gxp + (i + a) * xs.w;
              const T* gyr = gyp + i * ys.w;
              for (int j = 0; j < ys.w; ++j)
                for (int bb = 0; bb < kw; ++bb) gxr[j + bb] += kr[bb] * gyr[j];
            }
        }
    });
  }

  // ---- resampling ------------------------------------------------------

  int avg_pool(int x, int factor) {
    const Shape xs = nodes_[x].value.shape;
    if (xs.h % factor != 0 || xs.w % factor != 0)
      throw precondition_error("avg_pool: spatial dims " + xs.str() +
                               " not divisible by factor " + std::to_string(factor));
    Tensor<T> y({xs.n, xs.c, xs.h / factor, xs.w / factor});
    const Tensor<T>& xv = nodes_[x].value;
    const T inv = T(1) / static_cast<T>(factor * factor);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        T* yp = y.plane(n, c);
        for (int i = 0; i < y.shape.h; ++i)
          for (int j = 0; j < y.shape.w; ++j) {
            T acc = 0;
            for (int a = 0; a < factor; ++a)
              for (int bb = 0; bb < factor; ++bb)
                acc += xp[(i * factor + a) * xs.w + j * factor + bb];
            yp[i * y.shape.w + j] = acc * inv;
          }
      }
    return make(std::move(y), {x}, [x, factor](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& gy = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape, ys = gy.shape;
      const T inv = T(1) / static_cast<T>(factor * factor);
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          T* gxp = gx.plane(n, c);
          const T* gyp = gy.plane(n, c);
          for (int i = 0; i < ys.h; ++i)
            for (int j = 0; j < ys.w; ++j) {
              const T g = gyp[i * ys.w + j] * inv;
              for (int a = 0; a < factor; ++a)
                for (int bb = 0; bb < factor; ++bb)
                  gxp[(i * factor + a) * xs.w + j * factor + bb] += g;
            }
        }
    });
  }

  int nearest_up(int x, int factor) {
    const Shape xs = nodes_[x].value.shape;
    Tensor<T> y({xs.n, xs.c, xs.h * factor, xs.w * factor});
    const Tensor<T>& xv = nodes_[x].value;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        T* yp = y.plane(n, c);
        for (int i = 0; i < y.shape.h; ++i)
          for (int j = 0; j < y.shape.w; ++j)
            yp[i * y.shape.w + j] = xp[(i / factor) * xs.w + j / factor];
      }
    return make(std::move(y), {x}, [x, factor](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& gy = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape, ys = gy.shape;
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          T* gxp = gx.plane(n, c);
          const T* gyp = gy.plane(n, c);
          for (int i = 0; i < ys.h; ++i)
            for (int j = 0; j < ys.w; ++j)
              gxp[(i / factor) * xs.w + j / factor] += gyp[i * ys.w + j];
        }
    });
  }

  // ---- structure -------------------------------------------------------

  int concat_c(const std::vector<int>& xs) {
    if (xs.empty()) throw precondition_error("concat_c: empty input list");
    const Shape s0 = nodes_[xs[0]].value.shape;
    int ctot = 0;
    for (int id : xs) {
      const Shape s = nodes_[id].value.shape;
      if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
        throw precondition_error("concat_c: mixed shapes " + s0.str() + " vs " + s.str());
      ctot += s.c;
    }
    Tensor<T> y({s0.n, ctot, s0.h, s0.w});
    const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
    for (int n = 0; n < s0.n; ++n) {
      int coff = 0;
      for (int id : xs) {
        const Tensor<T>& xv = nodes_[id].value;
        std::copy_n(xv.plane(n, 0), plane * xv.shape.c, y.plane(n, coff));
        coff += xv.shape.c;
      }
    }
    return make(std::move(y), xs, [xs](Tape& t, int self) {
      const Tensor<T>& gy = t.grads_[self];
      const Shape ys = gy.shape;
      const std::size_t plane = static_cast<std::size_t>(ys.h) * ys.w;
      int coff = 0;
      for (int id : xs) {
        const int ci = t.nodes_[id].value.shape.c;
        if (t.nodes_[id].requires_grad) {
          Tensor<T>& gx = t.ensure_grad(id);
          for (int n = 0; n < ys.n; ++n) {
            const T* src = gy.plane(n, coff);
            T* dst = gx.plane(n, 0);
            for (std::size_t i = 0; i < plane * ci; ++i) dst[i] += src[i];
          }
        }
        coff += ci;
      }
    });
  }

  // ---- elementwise -----------------------------------------------------

  int add(int a, int b) {
    return binary(a, b, "add", [](T x, T y) { return x + y; },
                  [](Tape& t, int a2, int b2, int self) {
                    const Tensor<T>& g = t.grads_[self];
                    if (t.nodes_[a2].requires_grad) axpy(t.ensure_grad(a2), g, T(1));
                    if (t.nodes_[b2].requires_grad) axpy(t.ensure_grad(b2), g, T(1));
                  });
  }

  int sub(int a, int b) {
    return binary(a, b, "sub", [](T x, T y) { return x - y; },
                  [](Tape& t, int a2, int b2, int self) {
                    const Tensor<T>& g = t.grads_[self];
                    if (t.nodes_[a2].requires_grad) axpy(t.ensure_grad(a2), g, T(1));
                    if (t.nodes_[b2].requires_grad) axpy(t.ensure_grad(b2), g, T(-1));
                  });
  }

  int mul(int a, int b) {
    return binary(a, b, "mul", [](T x, T y) { return x * y; },
                  [](Tape& t, int a2, int b2, int self) {
                    const Tensor<T>& g = t.grads_[self];
                    if (t.nodes_[a2].requires_grad) {
                      Tensor<T>& ga = t.ensure_grad(a2);
                      const Tensor<T>& bv = t.nodes_[b2].value;
                      for (std::size_t i = 0; i < g.data.size(); ++i)
                        ga.data[i] += g.data[i] * bv.data[i];
                    }
                    if (t.nodes_[b2].requires_grad) {
                      Tensor<T>& gb = t.ensure_grad(b2);
                      const Tensor<T>& av = t.nodes_[a2].value;
                      for (std::size_t i = 0; i < g.data.size(); ++i)
                        gb.data[i] += g.data[i] * av.data[i];
                    }
                  });
  }

  int divide(int a, int b) {
    return binary(a, b, "div", [](T x, T y) { return x / y; },
                  [](Tape& t, int a2, int b2, int self) {
                    const Tensor<T>& g = t.grads_[self];
                    const Tensor<T>& av = t.nodes_[a2].value;
                    const Tensor<T>& bv = t.nodes_[b2].value;
                    if (t.nodes_[a2].requires_grad) {
                      Tensor<T>& ga = t.ensure_grad(a2);
                      for (std::size_t i = 0; i < g.data.size(); ++i)
                        ga.data[i] += g.data[i] / bv.data[i];
                    }
                    if (t.nodes_[b2].requires_grad) {
                      Tensor<T>& gb = t.ensure_grad(b2);
                      for (std::size_t i = 0; i < g.data.size(); ++i)
                        gb.data[i] -= g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
                    }
                  });
  }

  int add_scalar(int x, T s) {
    Tensor<T> y = nodes_[x].value;
    for (T& v : y.data) v += s;
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (t.nodes_[x].requires_grad) axpy(t.ensure_grad(x), t.grads_[self], T(1));
    });
  }

  int mul_scalar(int x, T s) {
    Tensor<T> y = nodes_[x].value;
    for (T& v : y.data) v *= s;
    return make(std::move(y), {x}, [x, s](Tape& t, int self) {
      if (t.nodes_[x].requires_grad) axpy(t.ensure_grad(x), t.grads_[self], s);
    });
  }

  int silu(int x) {
    const Tensor<T>& xv = nodes_[x].value;
    Tensor<T> y(xv.shape);
    for (std::size_t i = 0; i < xv.data.size(); ++i)
      y.data[i] = xv.data[i] * sigmoid_scalar(xv.data[i]);
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      const Tensor<T>& xv = t.nodes_[x].value;
      Tensor<T>& gx = t.ensure_grad(x);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const T s = sigmoid_scalar(xv.data[i]);
        gx.data[i] += g.data[i] * s * (T(1) + xv.data[i] * (T(1) - s));
      }
    });
  }

  int sigmoid(int x) {
    const Tensor<T>& xv = nodes_[x].value;
    Tensor<T> y(xv.shape);
    for (std::size_t i = 0; i < xv.data.size(); ++i) y.data[i] = sigmoid_scalar(xv.data[i]);
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      const Tensor<T>& yv = t.nodes_[self].value;
      Tensor<T>& gx = t.ensure_grad(x);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        gx.data[i] += g.data[i] * yv.data[i] * (T(1) - yv.data[i]);
    });
  }

  int abs_(int x) {
    const Tensor<T>& xv = nodes_[x].value;
    Tensor<T> y(xv.shape);
    for (std::size_t i = 0; i < xv.data.size(); ++i) y.data[i] = std::abs(xv.data[i]);
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      const Tensor<T>& xv = t.nodes_[x].value;
      Tensor<T>& gx = t.ensure_grad(x);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        const T s = xv.data[i] > T(0) ? T(1) : (xv.data[i] < T(0) ? T(-1) : T(0));
        gx.data[i] += g.data[i] * s;
      }
    });
  }

  // ---- pooled statistics -------------------------------------------------

  int global_avg_c(int x) {  // (N,C,H,W) -> (N,C,1,1)
    const Shape xs = nodes_[x].value.shape;
    Tensor<T> y({xs.n, xs.c, 1, 1});
    const Tensor<T>& xv = nodes_[x].value;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        double acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(xp[i]);
        y.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(plane));
      }
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape;
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const T gv = g.at(n, c, 0, 0) / static_cast<T>(plane);
          T* gxp = gx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) gxp[i] += gv;
        }
    });
  }

  int global_max_c(int x) {  // (N,C,H,W) -> (N,C,1,1); ties go to the first index
    const Shape xs = nodes_[x].value.shape;
    Tensor<T> y({xs.n, xs.c, 1, 1});
    std::vector<int> arg(static_cast<std::size_t>(xs.n) * xs.c);
    const Tensor<T>& xv = nodes_[x].value;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        std::size_t best = 0;
        for (std::size_t i = 1; i < plane; ++i)
          if (xp[i] > xp[best]) best = i;
        y.at(n, c, 0, 0) = xp[best];
        arg[static_cast<std::size_t>(n) * xs.c + c] = static_cast<int>(best);
      }
    const int id = make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape;
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c)
          gx.plane(n, c)[t.nodes_[self].arg[static_cast<std::size_t>(n) * xs.c + c]] +=
              g.at(n, c, 0, 0);
    });
    nodes_[id].arg = std::move(arg);
    return id;
  }

  int mean_over_c(int x) {  // (N,C,H,W) -> (N,1,H,W)
    const Shape xs = nodes_[x].value.shape;
    Tensor<T> y({xs.n, 1, xs.h, xs.w});
    const Tensor<T>& xv = nodes_[x].value;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    const T inv = T(1) / static_cast<T>(xs.c);
    for (int n = 0; n < xs.n; ++n) {
      T* yp = y.plane(n, 0);
      for (std::size_t i = 0; i < plane; ++i) yp[i] = 0;
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) yp[i] += xp[i];
      }
      for (std::size_t i = 0; i < plane; ++i) yp[i] *= inv;
    }
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape;
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      const T inv = T(1) / static_cast<T>(xs.c);
      for (int n = 0; n < xs.n; ++n) {
        const T* gp = g.plane(n, 0);
        for (int c = 0; c < xs.c; ++c) {
          T* gxp = gx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) gxp[i] += gp[i] * inv;
        }
      }
    });
  }

  int max_over_c(int x) {  // (N,C,H,W) -> (N,1,H,W); ties go to the lowest channel
    const Shape xs = nodes_[x].value.shape;
    Tensor<T> y({xs.n, 1, xs.h, xs.w});
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    std::vector<int> arg(static_cast<std::size_t>(xs.n) * plane);
    const Tensor<T>& xv = nodes_[x].value;
    for (int n = 0; n < xs.n; ++n) {
      T* yp = y.plane(n, 0);
      int* ap = arg.data() + static_cast<std::size_t>(n) * plane;
      const T* x0 = xv.plane(n, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        yp[i] = x0[i];
        ap[i] = 0;
      }
      for (int c = 1; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i)
          if (xp[i] > yp[i]) {
            yp[i] = xp[i];
            ap[i] = c;
          }
      }
    }
    const int id = make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      const Tensor<T>& g = t.grads_[self];
      Tensor<T>& gx = t.ensure_grad(x);
      const Shape xs = gx.shape;
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      for (int n = 0; n < xs.n; ++n) {
        const T* gp = g.plane(n, 0);
        const int* ap = t.nodes_[self].arg.data() + static_cast<std::size_t>(n) * plane;
        for (std::size_t i = 0; i < plane; ++i) gx.plane(n, ap[i])[i] += gp[i];
      }
    });
    nodes_[id].arg = std::move(arg);
    return id;
  }

  // ---- broadcast gating --------------------------------------------------

  int mul_bc_channel(int x, int g) {  // x:(N,C,H,W) * g:(N,C,1,1)
    const Shape xs = nodes_[x].value.shape;
    const Shape gs = nodes_[g].value.shape;
    if (gs.n != xs.n || gs.c != xs.c || gs.h != 1 || gs.w != 1)
      throw precondition_error("mul_bc_channel: gate shape " + gs.str() + " vs input " +
                               xs.str());
    Tensor<T> y(xs);
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& gv = nodes_[g].value;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T gg = gv.at(n, c, 0, 0);
        const T* xp = xv.plane(n, c);
        T* yp = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) yp[i] = xp[i] * gg;
      }
    return make(std::move(y), {x, g}, [x, g](Tape& t, int self) {
      const Tensor<T>& gy = t.grads_[self];
      const Shape xs = t.nodes_[x].value.shape;
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.ensure_grad(x);
        const Tensor<T>& gv = t.nodes_[g].value;
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c) {
            const T gg = gv.at(n, c, 0, 0);
            const T* gyp = gy.plane(n, c);
            T* gxp = gx.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) gxp[i] += gyp[i] * gg;
          }
      }
      if (t.nodes_[g].requires_grad) {
        Tensor<T>& gg = t.ensure_grad(g);
        const Tensor<T>& xv = t.nodes_[x].value;
        for (int n = 0; n < xs.n; ++n)
          for (int c = 0; c < xs.c; ++c) {
            const T* gyp = gy.plane(n, c);
            const T* xp = xv.plane(n, c);
            double acc = 0;
            for (std::size_t i = 0; i < plane; ++i)
              acc += static_cast<double>(gyp[i]) * static_cast<double>(xp[i]);
            gg.at(n, c, 0, 0) += static_cast<T>(acc);
          }
      }
    });
  }

  int mul_bc_spatial(int x, int m) {  // x:(N,C,H,W) * m:(N,1,H,W)
    const Shape xs = nodes_[x].value.shape;
    const Shape ms = nodes_[m].value.shape;
    if (ms.n != xs.n || ms.c != 1 || ms.h != xs.h || ms.w != xs.w)
      throw precondition_error("mul_bc_spatial: mask shape " + ms.str() + " vs input " +
                               xs.str());
    Tensor<T> y(xs);
    const Tensor<T>& xv = nodes_[x].value;
    const Tensor<T>& mv = nodes_[m].value;
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n) {
      const T* mp = mv.plane(n, 0);
      for (int c = 0; c < xs.c; ++c) {
        const T* xp = xv.plane(n, c);
        T* yp = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) yp[i] = xp[i] * mp[i];
      }
    }
    return make(std::move(y), {x, m}, [x, m](Tape& t, int self) {
      const Tensor<T>& gy = t.grads_[self];
      const Shape xs = t.nodes_[x].value.shape;
      const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.ensure_grad(x);
        const Tensor<T>& mv = t.nodes_[m].value;
        for (int n = 0; n < xs.n; ++n) {
          const T* mp = mv.plane(n, 0);
          for (int c = 0; c < xs.c; ++c) {
            const T* gyp = gy.plane(n, c);
            T* gxp = gx.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) gxp[i] += gyp[i] * mp[i];
          }
        }
      }
      if (t.nodes_[m].requires_grad) {
        Tensor<T>& gm = t.ensure_grad(m);
        const Tensor<T>& xv = t.nodes_[x].value;
        for (int n = 0; n < xs.n; ++n) {
          T* gmp = gm.plane(n, 0);
          for (int c = 0; c < xs.c; ++c) {
            const T* gyp = gy.plane(n, c);
            const T* xp = xv.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) gmp[i] += gyp[i] * xp[i];
          }
        }
      }
    });
  }

  // ---- reductions ----------------------------------------------------------

  int mean_all(int x) {
    const Tensor<T>& xv = nodes_[x].value;
    double acc = 0;
    for (const T& v : xv.data) acc += static_cast<double>(v);
    Tensor<T> y({1, 1, 1, 1});
    y.data[0] = static_cast<T>(acc / static_cast<double>(xv.data.size()));
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      Tensor<T>& gx = t.ensure_grad(x);
      const T g = t.grads_[self].data[0] / static_cast<T>(gx.data.size());
      for (T& v : gx.data) v += g;
    });
  }

  int sum_all(int x) {
    const Tensor<T>& xv = nodes_[x].value;
    double acc = 0;
    for (const T& v : xv.data) acc += static_cast<double>(v);
    Tensor<T> y({1, 1, 1, 1});
    y.data[0] = static_cast<T>(acc);
    return make(std::move(y), {x}, [x](Tape& t, int self) {
      if (!t.nodes_[x].requires_grad) return;
      Tensor<T>& gx = t.ensure_grad(x);
      const T g = t.grads_[self].data[0];
      for (T& v : gx.data) v += g;
    });
  }

  // seeds d(root)/d(root) = 1 and propagates to every reachable node
  void backward(int root) {
    if (nodes_[root].value.numel() != 1)
      throw precondition_error("backward: root must be scalar, got " +
                               nodes_[root].value.shape.str());
    grads_.assign(nodes_.size(), Tensor<T>{});
    ensure_grad(root).data[0] = T(1);
    for (int i = root; i >= 0; --i) {
      if (!nodes_[i].requires_grad || !nodes_[i].back) continue;
      if (i >= static_cast<int>(grads_.size()) || grads_[i].empty()) continue;
      nodes_[i].back(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;

  int make(Tensor<T> value, std::vector<int> parents, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    for (int p : n.parents)
      if (nodes_[p].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tensor<T>& ensure_grad(int i) {
    if (grads_[i].empty()) grads_[i] = Tensor<T>(nodes_[i].value.shape);
    return grads_[i];
  }

  template <typename FwdOp, typename BwdOp>
  int binary(int a, int b, const char* name, FwdOp fwd, BwdOp bwd) {
    const Tensor<T>& av = nodes_[a].value;
    const Tensor<T>& bv = nodes_[b].value;
    if (!(av.shape == bv.shape))
      throw precondition_error(std::string(name) + ": shape mismatch " + av.shape.str() +
                               " vs " + bv.shape.str());
    Tensor<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = fwd(av.data[i], bv.data[i]);
    return make(std::move(y), {a, b},
                [a, b, bwd](Tape& t, int self) { bwd(t, a, b, self); });
  }

  static void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += alpha * src.data[i];
  }

  static T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  // direct stride-1 convolution; each (n, oc) output plane is owned by one
  // thread so accumulation order is fixed
  static void conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                           int pad, Tensor<T>& y) {
    const int N = x.shape.n, IC = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int OC = w.shape.n, KH = w.shape.h, KW = w.shape.w;
    const int OH = y.shape.h, OW = y.shape.w;
    const long long work =
        static_cast<long long>(N) * OC * IC * KH * KW * OH * OW;
#pragma omp parallel for collapse(2) schedule(static) if (work > 200000)
    for (int n = 0; n < N; ++n)
      for (int oc = 0; oc < OC; ++oc) {
        T* yp = y.plane(n, oc);
        const T bias = b ? b->data[oc] : T(0);
        for (int i = 0; i < OH * OW; ++i) yp[i] = bias;
        for (int ic = 0; ic < IC; ++ic) {
          const T* xp = x.plane(n, ic);
          const T* wp = w.plane(oc, ic);
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const T wv = wp[kh * KW + kw];
              const int oh0 = std::max(0, pad - kh);
              const int oh1 = std::min(OH, H + pad - kh);
              const int ow0 = std::max(0, pad - kw);
              const int ow1 = std::min(OW, W + pad - kw);
              for (int oh = oh0; oh < oh1; ++oh) {
                const T* xr = xp + (oh + kh - pad) * W + (ow0 + kw - pad);
                T* yr = yp + oh * OW + ow0;
                for (int ow = ow0; ow < ow1; ++ow) yr[ow - ow0] += wv * xr[ow - ow0];
              }
            }
        }
      }
  }

  static void conv_backward_input(const Tensor<T>& gy, const Tensor<T>& w, int pad,
                                  Tensor<T>& gx) {
    const int N = gx.shape.n, IC = gx.shape.c, H = gx.shape.h, W = gx.shape.w;
    const int OC = w.shape.n, KH = w.shape.h, KW = w.shape.w;
    const int OH = gy.shape.h, OW = gy.shape.w;
    const long long work =
        static_cast<long long>(N) * OC * IC * KH * KW * OH * OW;
#pragma omp parallel for collapse(2) schedule(static) if (work > 200000)
    for (int n = 0; n < N; ++n)
      for (int ic = 0; ic < IC; ++ic) {
        T* gxp = gx.plane(n, ic);
        for (int oc = 0; oc < OC; ++oc) {
          const T* gyp = gy.plane(n, oc);
          const T* wp = w.plane(oc, ic);
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const T wv = wp[kh * KW + kw];
              const int ih0 = std::max(0, kh - pad);
              const int ih1 = std::min(H, OH + kh - pad);
              const int iw0 = std::max(0, kw - pad);
              const int iw1 = std::min(W, OW + kw - pad);
              for (int ih = ih0; ih < ih1; ++ih) {
                T* gxr = gxp + ih * W + iw0;
                const T* gyr = gyp + (ih - kh + pad) * OW + (iw0 - kw + pad);
                for (int iw = iw0; iw < iw1; ++iw) gxr[iw - iw0] += wv * gyr[iw - iw0];
              }
            }
        }
      }
  }

  // the tap accumulation runs over 8 fixed lanes so the reduction vectorizes
  // without reassociation freedom; the lane layout is ISA-independent, so
  // results stay bit-identical across machines and thread counts
  static void conv_backward_weight(const Tensor<T>& gy, const Tensor<T>& x, int pad,
                                   Tensor<T>& gw) {
    const int N = x.shape.n, IC = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int OC = gw.shape.n, KH = gw.shape.h, KW = gw.shape.w;
    const int OH = gy.shape.h, OW = gy.shape.w;
    constexpr int kLanes = 8;
    const long long work =
        static_cast<long long>(N) * OC * IC * KH * KW * OH * OW;
#pragma omp parallel for schedule(static) if (work > 200000)
    for (int oc = 0; oc < OC; ++oc) {
      for (int ic = 0; ic < IC; ++ic) {
        T* gwp = gw.plane(oc, ic);
        for (int kh = 0; kh < KH; ++kh)
          for (int kw = 0; kw < KW; ++kw) {
            const int oh0 = std::max(0, pad - kh);
            const int oh1 = std::min(OH, H + pad - kh);
            const int ow0 = std::max(0, pad - kw);
            const int ow1 = std::min(OW, W + pad - kw);
            const int row_len = ow1 - ow0;
            const int vec_len = row_len - row_len % kLanes;
            T lanes[kLanes] = {};
            T tail = 0;
            for (int n = 0; n < N; ++n) {
              const T* gyp = gy.plane(n, oc);
              const T* xp = x.plane(n, ic);
              for (int oh = oh0; oh < oh1; ++oh) {
                const T* gyr = gyp + oh * OW + ow0;
                const T* xr = xp + (oh + kh - pad) * W + (ow0 + kw - pad);
                for (int i = 0; i < vec_len; i += kLanes)
                  for (int l = 0; l < kLanes; ++l) lanes[l] += gyr[i + l] * xr[i + l];
                for (int i = vec_len; i < row_len; ++i) tail += gyr[i] * xr[i];
              }
            }
            T acc = tail;
            for (int l = 0; l < kLanes; ++l) acc += lanes[l];
            gwp[kh * KW + kw] += acc;
          }
      }
    }
  }

  static void conv_backward_bias(const Tensor<T>& gy, Tensor<T>& gb) {
    const int N = gy.shape.n, OC = gy.shape.c;
    const std::size_t plane = static_cast<std::size_t>(gy.shape.h) * gy.shape.w;
    for (int oc = 0; oc < OC; ++oc) {
      double acc = 0;
      for (int n = 0; n < N; ++n) {
        const T* gyp = gy.plane(n, oc);
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(gyp[i]);
      }
      gb.data[oc] += static_cast<T>(acc);
    }
  }
};

}  // namespace mh2f
