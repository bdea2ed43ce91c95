#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mh2f/autodiff.hpp"
#include "mh2f/rng.hpp"
#include "mh2f/tensor.hpp"

// Local finite-difference checker for individual tape ops; intentionally
// separate from the library harness so the tape is validated independently.

namespace testsupport {

using mh2f::Tape;
using mh2f::TensorD;

struct GradCheckResult {
  double max_rel_err = 0;
};

// build(tape, leaf_ids) must emit the graph from the given leaves and return a
// scalar objective node.
inline GradCheckResult check_gradients(
    std::vector<TensorD*> leaves,
    const std::function<int(Tape<double>&, const std::vector<int>&)>& build,
    double step = 1e-5) {
  auto evaluate = [&](bool with_grad, std::vector<TensorD>* grads) {
    Tape<double> tape;
    std::vector<int> ids;
    ids.reserve(leaves.size());
    for (TensorD* t : leaves) ids.push_back(tape.leaf(*t, with_grad));
    const int obj = build(tape, ids);
    const double v = tape.val(obj).data[0];
    if (with_grad && grads) {
      tape.backward(obj);
      for (std::size_t i = 0; i < ids.size(); ++i)
        grads->push_back(tape.has_grad(ids[i]) ? tape.grad(ids[i])
                                               : TensorD(leaves[i]->shape));
    }
    return v;
  };

  std::vector<TensorD> analytic;
  evaluate(true, &analytic);

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    TensorD& t = *leaves[li];
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const double orig = t.data[k];
      t.data[k] = orig + step;
      const double f1 = evaluate(false, nullptr);
      t.data[k] = orig - step;
      const double f2 = evaluate(false, nullptr);
      t.data[k] = orig;
      const double fd = (f1 - f2) / (2 * step);
      const double a = analytic[li].data[k];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
    }
  }
  return res;
}

inline void fill_random(TensorD& t, mh2f::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

}  // namespace testsupport
