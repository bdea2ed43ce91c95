#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mh2f/config.hpp"
#include "mh2f/tensor.hpp"

// Synthetic rain streaks: seeded uniform noise is thresholded by density,
// scaled by intensity with multiplicative jitter, then smeared along a line
// kernel oriented angle_deg from vertical. Rainy = clip(clean + rain, 0, 1).

namespace mh2f {

// Normalized linear motion-blur kernel, (1,1,S,S) with S = length odd-padded.
TensorD make_streak_kernel(double angle_deg, int length_px);

// Single-channel rain map, (1,1,h,w), values in [0,1]; pure in p.seed.
TensorF synth_rain_layer(int height, int width, const RainParams& p);

// Returns (rainy, rain layer); the rain map broadcasts over RGB.
std::pair<TensorF, TensorF> apply_rain(const TensorF& clean, const RainParams& p);

struct ManifestRow {
  int index = 0;
  std::string clean_file;
  std::string rainy_file;
  RainParams params;  // params.seed holds the derived per-pair seed
};

// Renders rain-N.png / norain-N.png pairs for every (clean image, param set)
// combination and writes manifest.csv:
//   index,clean_file,rainy_file,angle_deg,length_px,density,intensity,seed
std::vector<ManifestRow> generate_dataset(const std::string& clean_dir,
                                          const std::vector<RainParams>& params_grid,
                                          const std::string& out_dir);

std::string manifest_csv(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> parse_manifest_csv(const std::string& text);

}  // namespace mh2f
