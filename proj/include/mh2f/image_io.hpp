#pragma once

#include <string>

#include "mh2f/tensor.hpp"

namespace mh2f {

// Decodes any PNG to a (1,3,H,W) tensor in [0,1]; gray/palette/alpha inputs
// are expanded to RGB. Throws io_error with the path on failure.
TensorF read_png(const std::string& path);

// Encodes a (1,3,H,W) tensor in [0,1] as 8-bit RGB. Output bytes are
// deterministic for identical inputs.
void write_png(const TensorF& img, const std::string& path);

// Reflection padding on the right/bottom up to (th, tw); used at inference for
// sizes the hourglass cannot take directly.
TensorF reflect_pad_to(const TensorF& img, int th, int tw);

TensorF crop_to(const TensorF& img, int th, int tw);

}  // namespace mh2f
