#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mh2f/image_io.hpp"
#include "mh2f/rainsim.hpp"
#include "mh2f/rng.hpp"

using namespace mh2f;
namespace fs = std::filesystem;

namespace {

TensorF random_clean(int h, int w, std::uint64_t seed) {
  TensorF img({1, 3, h, w});
  Rng rng(seed);
  for (float& v : img.data) v = static_cast<float>(rng.uniform(0.0, 0.6));
  return img;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("streak kernel") {
  SUBCASE("length one is the identity blur") {
    const TensorD k = make_streak_kernel(30.0, 1);
    CHECK(k.shape == Shape{1, 1, 1, 1});
    CHECK(k.data[0] == doctest::Approx(1.0));
  }

  SUBCASE("every kernel is normalized") {
    for (const double angle : {-45.0, -10.0, 0.0, 17.0, 45.0})
      for (const int len : {1, 2, 5, 9, 14}) {
        const TensorD k = make_streak_kernel(angle, len);
        double sum = 0;
        for (double v : k.data) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      }
  }

  SUBCASE("vertical line of five equal entries at angle zero") {
    const TensorD k = make_streak_kernel(0.0, 5);
    CHECK(k.shape == Shape{1, 1, 5, 5});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        if (j == 2)
          CHECK(k.at(0, 0, i, j) == doctest::Approx(0.2));
        else
          CHECK(k.at(0, 0, i, j) == doctest::Approx(0.0));
      }
  }
}

TEST_CASE("synthetic rain layer") {
  RainParams p;
  p.angle_deg = 0.0;
  p.length_px = 5;
  p.density = 0.05;
  p.intensity = 0.8;
  p.intensity_jitter = 0.0;
  p.seed = 9;

  SUBCASE("zero density gives an all-zero map") {
    RainParams zero = p;
    zero.density = 0.0;
    const TensorF rain = synth_rain_layer(48, 48, zero);
    for (float v : rain.data) CHECK(v == 0.0f);
  }

  SUBCASE("same seed reproduces the map exactly") {
    const TensorF a = synth_rain_layer(32, 40, p);
    const TensorF b = synth_rain_layer(32, 40, p);
    CHECK(std::equal(a.data.begin(), a.data.end(), b.data.begin()));
  }

  SUBCASE("values stay in [0,1]") {
    RainParams heavy = p;
    heavy.density = 0.5;
    heavy.intensity = 1.0;
    heavy.intensity_jitter = 1.0;
    const TensorF rain = synth_rain_layer(32, 32, heavy);
    for (float v : rain.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  SUBCASE("nonzero fraction lands in the blur-spread band over 100 seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      RainParams q = p;
      q.seed = seed;
      const TensorF rain = synth_rain_layer(64, 64, q);
      std::size_t nonzero = 0;
      for (float v : rain.data) nonzero += v > 0.0f;
      const double fraction = static_cast<double>(nonzero) / rain.numel();
      CHECK(fraction >= 0.01);
      CHECK(fraction <= 0.5);
    }
  }

  SUBCASE("dims below the kernel side are rejected") {
    CHECK_THROWS_AS(synth_rain_layer(4, 64, p), precondition_error);
  }
}

TEST_CASE("apply_rain") {
  const TensorF clean = random_clean(32, 32, 77);
  RainParams p;
  p.seed = 5;

  SUBCASE("zero density keeps the image untouched") {
    RainParams zero = p;
    zero.density = 0.0;
    const auto [rainy, rain] = apply_rain(clean, zero);
    CHECK(std::equal(rainy.data.begin(), rainy.data.end(), clean.data.begin()));
  }

  SUBCASE("rain only brightens") {
    const auto [rainy, rain] = apply_rain(clean, p);
    double mean_clean = 0, mean_rainy = 0;
    for (std::size_t i = 0; i < clean.data.size(); ++i) {
      CHECK(rainy.data[i] >= clean.data[i]);
      mean_clean += clean.data[i];
      mean_rainy += rainy.data[i];
    }
    CHECK(mean_rainy >= mean_clean);
  }
}

TEST_CASE("generate_dataset writes pairs, a manifest, and is reproducible") {
  TempDir clean_dir("mh2f_test_clean");
  TempDir out_a("mh2f_test_out_a");
  TempDir out_b("mh2f_test_out_b");
  for (int i = 0; i < 3; ++i)
    write_png(random_clean(24, 24, 500 + i),
              (clean_dir.path / ("img" + std::to_string(i) + ".png")).string());

  std::vector<RainParams> grid(2);
  grid[0].seed = 1;
  grid[1].seed = 2;
  grid[1].angle_deg = -20.0;
  grid[1].density = 0.08;

  const auto rows = generate_dataset(clean_dir.path.string(), grid, out_a.path.string());
  CHECK(rows.size() == 6);  // 3 clean x 2 param sets

  // manifest has exactly one row per pair
  const std::string manifest = read_bytes(out_a.path / "manifest.csv");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 6);
  CHECK(parse_manifest_csv(manifest).size() == 6);

  for (const auto& row : rows) {
    CHECK(fs::exists(out_a.path / row.rainy_file));
    CHECK(fs::exists(out_a.path / row.clean_file));
    // additive rain only brightens (up to 8-bit quantization)
    const TensorF rainy = read_png((out_a.path / row.rainy_file).string());
    const TensorF clean = read_png((out_a.path / row.clean_file).string());
    for (std::size_t i = 0; i < rainy.data.size(); ++i)
      CHECK(rainy.data[i] >= clean.data[i] - 1.0f / 255.0f);
  }

  // regeneration with the same seeds is byte-identical
  generate_dataset(clean_dir.path.string(), grid, out_b.path.string());
  for (const auto& row : rows) {
    CHECK(read_bytes(out_a.path / row.rainy_file) == read_bytes(out_b.path / row.rainy_file));
    CHECK(read_bytes(out_a.path / row.clean_file) == read_bytes(out_b.path / row.clean_file));
  }
  CHECK(read_bytes(out_a.path / "manifest.csv") == read_bytes(out_b.path / "manifest.csv"));
}

TEST_CASE("png round trip is exact at 8-bit resolution") {
  TempDir dir("mh2f_test_png");
  TensorF img({1, 3, 9, 13});
  Rng rng(55);
  for (float& v : img.data)
    v = static_cast<float>(rng.uniform_int(256)) / 255.0f;  // exactly representable
  const std::string path = (dir.path / "t.png").string();
  write_png(img, path);
  const TensorF back = read_png(path);
  REQUIRE(back.shape == img.shape);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-9));
}

TEST_CASE("rain params are validated") {
  RainParams bad;
  bad.angle_deg = 60.0;
  CHECK_THROWS_AS(synth_rain_layer(32, 32, bad), config_error);
  bad = RainParams{};
  bad.density = 1.5;
  CHECK_THROWS_AS(synth_rain_layer(32, 32, bad), config_error);
}
