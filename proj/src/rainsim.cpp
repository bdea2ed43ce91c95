#include "mh2f/rainsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mh2f/errors.hpp"
#include "mh2f/image_io.hpp"
#include "mh2f/rng.hpp"

namespace fs = std::filesystem;

namespace mh2f {

TensorD make_streak_kernel(double angle_deg, int length_px) {
  if (length_px < 1) throw precondition_error("make_streak_kernel: length_px must be >= 1");
  const int side = length_px % 2 == 1 ? length_px : length_px + 1;
  TensorD k({1, 1, side, side});
  const double center = (side - 1) / 2.0;
  const double rad = angle_deg * M_PI / 180.0;
  // unit steps along a line through the kernel center, angle from vertical;
  // each sample is splatted bilinearly
  for (int i = 0; i < length_px; ++i) {
    const double t = i - (length_px - 1) / 2.0;
    const double y = center + t * std::cos(rad);
    const double x = center + t * std::sin(rad);
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int yy[4] = {y0, y0, y0 + 1, y0 + 1};
    const int xx[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int s = 0; s < 4; ++s)
      if (w[s] > 0 && yy[s] >= 0 && yy[s] < side && xx[s] >= 0 && xx[s] < side)
        k.at(0, 0, yy[s], xx[s]) += w[s];
  }
  double sum = 0;
  for (double v : k.data) sum += v;
  for (double& v : k.data) v /= sum;
  return k;
}

TensorF synth_rain_layer(int height, int width, const RainParams& p) {
  require_valid_rain_params(p);
  const TensorD kernel = make_streak_kernel(p.angle_deg, p.length_px);
  const int side = kernel.shape.h;
  if (height < side || width < side)
    throw precondition_error("synth_rain_layer: dims must be >= kernel side " +
                             std::to_string(side));

  // seed pixels: uniform noise thresholded at 1 - density
  TensorF seeds({1, 1, height, width});
  Rng rng(mix_seed(p.seed, 0x7261696e6c617972ULL));
  const double threshold = 1.0 - p.density;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = rng.uniform();
      if (u > threshold) {
        const double amp = p.intensity * (1.0 + p.intensity_jitter * rng.uniform(-1.0, 1.0));
        seeds.at(0, 0, y, x) = static_cast<float>(std::max(0.0, amp));
      }
    }

  // smear with the streak kernel (same padding), then clip
  TensorF rain({1, 1, height, width});
  const int half = side / 2;
  const float* sp = seeds.plane(0, 0);
  float* rp = rain.plane(0, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0;
      for (int a = 0; a < side; ++a) {
        const int sy = y + a - half;
        if (sy < 0 || sy >= height) continue;
        for (int b = 0; b < side; ++b) {
          const int sx = x + b - half;
          if (sx < 0 || sx >= width) continue;
          acc += kernel.at(0, 0, a, b) * sp[sy * width + sx];
        }
      }
      rp[y * width + x] = static_cast<float>(std::min(1.0, std::max(0.0, acc)));
    }
  return rain;
}

std::pair<TensorF, TensorF> apply_rain(const TensorF& clean, const RainParams& p) {
  validate_image_range(clean, "apply_rain input");
  TensorF rain = synth_rain_layer(clean.shape.h, clean.shape.w, p);
  TensorF rainy = clean;
  const float* rp = rain.plane(0, 0);
  const std::size_t plane = static_cast<std::size_t>(clean.shape.h) * clean.shape.w;
  for (int n = 0; n < clean.shape.n; ++n)
    for (int c = 0; c < clean.shape.c; ++c) {
      float* out = rainy.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) out[i] = std::min(1.0f, out[i] + rp[i]);
    }
  return {std::move(rainy), std::move(rain)};
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string manifest_csv(const std::vector<ManifestRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows)
    os << r.index << "," << r.clean_file << "," << r.rainy_file << ","
       << fmt_double(r.params.angle_deg) << "," << r.params.length_px << ","
       << fmt_double(r.params.density) << "," << fmt_double(r.params.intensity) << ","
       << r.params.seed << "\n";
  return os.str();
}

std::vector<ManifestRow> parse_manifest_csv(const std::string& text) {
  std::vector<ManifestRow> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw io_error("manifest row has " + std::to_string(fields.size()) +
                     " fields, expected 8: " + line);
    ManifestRow r;
    r.index = std::stoi(fields[0]);
    r.clean_file = fields[1];
    r.rainy_file = fields[2];
    r.params.angle_deg = std::stod(fields[3]);
    r.params.length_px = std::stoi(fields[4]);
    r.params.density = std::stod(fields[5]);
    r.params.intensity = std::stod(fields[6]);
    r.params.seed = std::stoull(fields[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ManifestRow> generate_dataset(const std::string& clean_dir,
                                          const std::vector<RainParams>& params_grid,
                                          const std::string& out_dir) {
  if (params_grid.empty())
    throw precondition_error("generate_dataset: empty params grid");
  if (!fs::is_directory(clean_dir))
    throw io_error("clean dir does not exist: " + clean_dir);

  std::vector<fs::path> clean_files;
  for (const auto& e : fs::directory_iterator(clean_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      clean_files.push_back(e.path());
  std::sort(clean_files.begin(), clean_files.end());
  if (clean_files.empty()) throw io_error("no .png images in " + clean_dir);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create output dir " + out_dir + ": " + ec.message());

  std::vector<ManifestRow> rows;
  int pair_id = 1;
  for (std::size_t i = 0; i < clean_files.size(); ++i) {
    const TensorF clean = read_png(clean_files[i].string());
    for (std::size_t j = 0; j < params_grid.size(); ++j) {
      RainParams p = params_grid[j];
      p.seed = mix_seed(params_grid[j].seed, i);  // per-image seed derivation
      auto [rainy, rain] = apply_rain(clean, p);

      ManifestRow row;
      row.index = pair_id;
      row.clean_file = "norain-" + std::to_string(pair_id) + ".png";
      row.rainy_file = "rain-" + std::to_string(pair_id) + ".png";
      row.params = p;
      write_png(clean, (fs::path(out_dir) / row.clean_file).string());
      write_png(rainy, (fs::path(out_dir) / row.rainy_file).string());
      rows.push_back(row);
      ++pair_id;
    }
  }

  std::ofstream mf(fs::path(out_dir) / "manifest.csv", std::ios::binary);
  if (!mf) throw io_error("cannot write manifest in " + out_dir);
  mf << manifest_csv(rows);
  if (!mf.good()) throw io_error("manifest write failed in " + out_dir);
  return rows;
}

}  // namespace mh2f
