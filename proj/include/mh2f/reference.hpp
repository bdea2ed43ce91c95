#pragma once

#include "mh2f/losses.hpp"
#include "mh2f/tensor.hpp"

namespace mh2f::reference {

// Naive per-window SSIM used to cross-check the vectorized implementation.
// Walks every valid window position and computes the Gaussian-weighted moments
// by direct summation; shares no code with the blur-based path.
double ssim_naive(const TensorD& a, const TensorD& b, const SsimParams& p = {});

}  // namespace mh2f::reference
