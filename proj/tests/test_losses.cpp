#include <doctest.h>

#include <cmath>

#include "mh2f/losses.hpp"
#include "mh2f/metrics.hpp"
#include "mh2f/reference.hpp"
#include "mh2f/rng.hpp"
#include "mh2f/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace mh2f;

namespace {

TensorD random_image(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  TensorD t(s);
  Rng rng(seed);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// scalar-loop oracle, no tensor machinery
double l1_oracle(const TensorD& a, const TensorD& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return acc / static_cast<double>(a.data.size());
}

double mse_oracle(const TensorD& a, const TensorD& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

}  // namespace

TEST_CASE("l1 loss") {
  const TensorD a = random_image({2, 3, 8, 8}, 100);

  SUBCASE("identical inputs give zero") { CHECK(l1_loss(a, a) == 0.0); }

  SUBCASE("uniform offset") {
    TensorD gt({1, 3, 8, 8}, 0.0);
    TensorD r({1, 3, 8, 8}, 0.1);
    CHECK(l1_loss(r, gt) == doctest::Approx(0.1).epsilon(1e-12));
  }

  SUBCASE("matches the scalar-loop oracle") {
    const TensorD b = random_image({2, 3, 8, 8}, 101);
    CHECK(std::abs(l1_loss(a, b) - l1_oracle(a, b)) < 1e-12);
  }

  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(l1_loss(a, TensorD({1, 3, 8, 8})), precondition_error);
  }
}

TEST_CASE("ssim index") {
  SUBCASE("self-similarity is exactly one") {
    const TensorD a = random_image({1, 3, 32, 32}, 102);
    CHECK(std::abs(ssim_index(a, a) - 1.0) < 1e-12);
  }

  SUBCASE("symmetry holds exactly") {
    const TensorD a = random_image({1, 1, 16, 16}, 103);
    const TensorD b = random_image({1, 1, 16, 16}, 104);
    CHECK(ssim_index(a, b) == ssim_index(b, a));
  }

  SUBCASE("agrees with the naive per-window reference") {
    for (int trial = 0; trial < 20; ++trial) {
      const TensorD a = random_image({1, 3, 32, 32}, 200 + 2 * trial);
      const TensorD b = random_image({1, 3, 32, 32}, 201 + 2 * trial);
      const double fast = ssim_index(a, b);
      const double naive = reference::ssim_naive(a, b);
      CHECK(std::abs(fast - naive) < 1e-6);
    }
  }

  SUBCASE("image smaller than the window is rejected") {
    const TensorD small({1, 1, 8, 8}, 0.5);
    CHECK_THROWS_AS(ssim_index(small, small), precondition_error);
  }

  SUBCASE("window parameters are validated") {
    const TensorD a = random_image({1, 1, 16, 16}, 105);
    SsimParams p;
    p.window_size = 10;
    CHECK_THROWS_AS(ssim_index(a, a, p), precondition_error);
    p.window_size = 11;
    p.sigma = 0;
    CHECK_THROWS_AS(ssim_index(a, a, p), precondition_error);
  }
}

TEST_CASE("ssim loss") {
  const TensorD a = random_image({1, 3, 16, 16}, 106);

  SUBCASE("identical inputs give zero") { CHECK(std::abs(ssim_loss(a, a)) < 1e-12); }

  SUBCASE("bounded in [0, 2] over random pairs") {
    for (int trial = 0; trial < 10; ++trial) {
      const TensorD x = random_image({1, 1, 16, 16}, 300 + 2 * trial);
      const TensorD y = random_image({1, 1, 16, 16}, 301 + 2 * trial);
      const double v = ssim_loss(x, y);
      CHECK(v >= 0.0);
      CHECK(v <= 2.0);
    }
  }

  SUBCASE("gradient matches finite differences on 12x12 doubles") {
    const FdReport rep = finite_difference_check("ssim_loss");
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("hybrid loss") {
  const TensorD r = random_image({1, 3, 16, 16}, 107);
  const TensorD gt = random_image({1, 3, 16, 16}, 108);

  SUBCASE("default weighting") {
    const LossBreakdown b = hybrid_loss(r, gt);
    CHECK(b.lambda == 0.2);
    CHECK(b.total == b.l1 + 0.2 * b.ssim_loss);
  }

  SUBCASE("identical inputs vanish") {
    const LossBreakdown b = hybrid_loss(r, r);
    CHECK(b.total == doctest::Approx(0.0));
  }

  SUBCASE("zero weight reduces to the l1 term") {
    const LossBreakdown b = hybrid_loss(r, gt, 0.0);
    CHECK(b.total == b.l1);
  }

  SUBCASE("the identity holds over 100 random pairs") {
    for (int trial = 0; trial < 100; ++trial) {
      const TensorD x = random_image({1, 3, 12, 12}, 400 + 2 * trial);
      const TensorD y = random_image({1, 3, 12, 12}, 401 + 2 * trial);
      const LossBreakdown b = hybrid_loss(x, y, 0.2);
      CHECK(std::abs(b.total - (b.l1 + 0.2 * b.ssim_loss)) < 1e-9);
    }
  }

  SUBCASE("l1 gradient path verifies") {
    const FdReport rep = finite_difference_check("l1_loss");
    CHECK(rep.pass);
  }

  SUBCASE("combined gradient path verifies") {
    const FdReport rep = finite_difference_check("hybrid_loss");
    CHECK(rep.pass);
  }
}

TEST_CASE("psnr") {
  SUBCASE("identical images hit the 100 dB cap") {
    const TensorD a = random_image({1, 3, 8, 8}, 109);
    CHECK(psnr(a, a) == 100.0);
  }

  SUBCASE("uniform difference of 0.1 gives exactly 20 dB") {
    TensorD gt({1, 3, 8, 8}, 0.2);
    TensorD r({1, 3, 8, 8}, 0.3);
    CHECK(psnr(r, gt) == doctest::Approx(20.0).epsilon(1e-12));
  }

  SUBCASE("matches the scalar MSE oracle") {
    const TensorD a = random_image({2, 3, 8, 8}, 110);
    const TensorD b = random_image({2, 3, 8, 8}, 111);
    const double expect = 10.0 * std::log10(1.0 / mse_oracle(a, b));
    CHECK(std::abs(psnr(a, b) - expect) < 1e-9);
  }

  SUBCASE("translation of both images leaves psnr unchanged") {
    const TensorD a = random_image({1, 3, 8, 8}, 112, 0.1, 0.5);
    const TensorD b = random_image({1, 3, 8, 8}, 113, 0.1, 0.5);
    TensorD a2 = a, b2 = b;
    for (double& v : a2.data) v += 0.3;
    for (double& v : b2.data) v += 0.3;
    CHECK(psnr(a2, b2) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
  }

  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(psnr(TensorD({1, 3, 8, 8}), TensorD({1, 3, 4, 4})),
                    precondition_error);
  }
}

TEST_CASE("evaluate_pairs") {
  TensorF img({1, 3, 16, 16});
  Rng rng(114);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());

  SUBCASE("single identical pair") {
    const EvalReport rep = evaluate_pairs({{"a.png", img, img}});
    CHECK(rep.rows.size() == 1);
    CHECK(rep.mean_psnr == 100.0);
    CHECK(rep.mean_ssim == doctest::Approx(1.0));
  }

  SUBCASE("duplicated pairs keep the mean") {
    TensorF other = img;
    for (float& v : other.data) v = std::min(1.0f, v + 0.05f);
    const EvalReport one = evaluate_pairs({{"a.png", other, img}});
    const EvalReport two = evaluate_pairs({{"a.png", other, img}, {"b.png", other, img}});
    CHECK(two.mean_psnr == doctest::Approx(one.mean_psnr));
    CHECK(two.mean_ssim == doctest::Approx(one.mean_ssim));
  }

  SUBCASE("mean of two pairs matches per-pair values") {
    TensorF off1 = img, off2 = img;
    for (float& v : off1.data) v = std::min(1.0f, v + 0.1f);
    for (float& v : off2.data) v = std::min(1.0f, v + 0.2f);
    const EvalReport rep = evaluate_pairs({{"a", off1, img}, {"b", off2, img}});
    const double expect = (psnr(off1, img) + psnr(off2, img)) / 2.0;
    CHECK(rep.mean_psnr == doctest::Approx(expect));
  }

  SUBCASE("empty list is rejected") {
    CHECK_THROWS_AS(evaluate_pairs({}), precondition_error);
  }

  SUBCASE("csv report has one row per pair plus the summary") {
    const EvalReport rep = evaluate_pairs({{"a.png", img, img}, {"b.png", img, img}});
    std::ostringstream os;
    write_report_csv(rep, os);
    const std::string csv = os.str();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("mean,") != std::string::npos);
  }
}
