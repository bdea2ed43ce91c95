#include <doctest.h>

#include <cmath>

#include "mh2f/autodiff.hpp"
#include "mh2f/rng.hpp"
#include "support/gradcheck.hpp"

using namespace mh2f;
using testsupport::check_gradients;
using testsupport::fill_random;

TEST_CASE("conv2d forward matches hand-computed values") {
  Tape<double> t;
  TensorD x({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x.data[i] = i + 1;

  SUBCASE("2x2 kernel, valid") {
    TensorD w({1, 1, 2, 2});
    w.data = {1, 0, 0, 1};  // y[i][j] = x[i][j] + x[i+1][j+1]
    const int y = t.conv2d(t.leaf(x), t.leaf(w), -1, 0);
    CHECK(t.val(y).shape == Shape{1, 1, 2, 2});
    CHECK(t.val(y).data[0] == doctest::Approx(6));
    CHECK(t.val(y).data[1] == doctest::Approx(8));
    CHECK(t.val(y).data[2] == doctest::Approx(12));
    CHECK(t.val(y).data[3] == doctest::Approx(14));
  }

  SUBCASE("3x3 identity kernel with padding keeps the input") {
    TensorD w({1, 1, 3, 3});
    w.data = {0, 0, 0, 0, 1, 0, 0, 0, 0};
    const int y = t.conv2d(t.leaf(x), t.leaf(w), -1, 1);
    for (int i = 0; i < 9; ++i) CHECK(t.val(y).data[i] == doctest::Approx(x.data[i]));
  }

  SUBCASE("bias broadcasts per output channel") {
    TensorD w({2, 1, 1, 1});
    w.data = {1, 2};
    TensorD b({1, 2, 1, 1});
    b.data = {10, 20};
    const int y = t.conv2d(t.leaf(x), t.leaf(w), t.leaf(b), 0);
    CHECK(t.val(y).at(0, 0, 0, 0) == doctest::Approx(11));
    CHECK(t.val(y).at(0, 1, 0, 0) == doctest::Approx(22));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tape<double> t;
  TensorD x({1, 3, 4, 4});
  TensorD w({4, 2, 3, 3});
  CHECK_THROWS_AS(t.conv2d(t.leaf(x), t.leaf(w), -1, 1), config_error);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  TensorD x({2, 3, 5, 6}), w({4, 3, 3, 3}), b({1, 4, 1, 1});
  fill_random(x, rng);
  fill_random(w, rng, -0.3, 0.3);
  fill_random(b, rng, -0.3, 0.3);
  auto res = check_gradients({&x, &w, &b}, [](Tape<double>& t, const std::vector<int>& id) {
    return t.sum_all(t.conv2d(id[0], id[1], id[2], 1));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d gradients, 1x1 and 7x7 kernels") {
  Rng rng(12);
  TensorD x({1, 2, 8, 8}), w1({3, 2, 1, 1}), b1({1, 3, 1, 1}), w7({1, 2, 7, 7}),
      b7({1, 1, 1, 1});
  fill_random(x, rng);
  fill_random(w1, rng, -0.5, 0.5);
  fill_random(b1, rng, -0.5, 0.5);
  fill_random(w7, rng, -0.2, 0.2);
  fill_random(b7, rng, -0.2, 0.2);
  auto res =
      check_gradients({&x, &w1, &b1, &w7, &b7}, [](Tape<double>& t, const std::vector<int>& id) {
        const int a = t.conv2d(id[0], id[1], id[2], 0);   // 1x1
        const int c = t.conv2d(id[0], id[3], id[4], 3);   // 7x7 same
        return t.add(t.sum_all(a), t.sum_all(c));
      });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("avg_pool forward") {
  Tape<double> t;

  SUBCASE("constant input stays constant") {
    TensorD x({1, 4, 8, 8}, 1.0);
    const int y = t.avg_pool(t.leaf(x), 2);
    CHECK(t.val(y).shape == Shape{1, 4, 4, 4});
    for (double v : t.val(y).data) CHECK(v == doctest::Approx(1.0));
  }

  SUBCASE("checkerboard averages to one half") {
    TensorD x({1, 1, 4, 4});
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) x.at(0, 0, i, j) = (i + j) % 2 == 0 ? 0.0 : 1.0;
    const int y = t.avg_pool(t.leaf(x), 2);
    for (double v : t.val(y).data) CHECK(v == doctest::Approx(0.5));
  }

  SUBCASE("indivisible dims are rejected") {
    TensorD x({1, 4, 6, 8});
    CHECK_THROWS_AS(t.avg_pool(t.leaf(x), 4), precondition_error);
  }
}

TEST_CASE("nearest_up forward") {
  Tape<double> t;
  TensorD x({1, 1, 2, 2});
  x.data = {1, 2, 3, 4};
  const int y = t.nearest_up(t.leaf(x), 2);
  CHECK(t.val(y).shape == Shape{1, 1, 4, 4});
  // 2x2 constant blocks
  CHECK(t.val(y).at(0, 0, 0, 0) == 1);
  CHECK(t.val(y).at(0, 0, 0, 1) == 1);
  CHECK(t.val(y).at(0, 0, 1, 1) == 1);
  CHECK(t.val(y).at(0, 0, 0, 2) == 2);
  CHECK(t.val(y).at(0, 0, 3, 3) == 4);
  // replication multiplies the total by factor^2
  double sx = 0, sy = 0;
  for (double v : x.data) sx += v;
  for (double v : t.val(y).data) sy += v;
  CHECK(sy == doctest::Approx(4 * sx));
}

TEST_CASE("pool and upsample gradients") {
  Rng rng(13);
  TensorD x({1, 3, 8, 8});
  fill_random(x, rng);
  auto res = check_gradients({&x}, [](Tape<double>& t, const std::vector<int>& id) {
    const int down = t.avg_pool(id[0], 2);
    const int up = t.nearest_up(down, 2);
    return t.sum_all(t.mul(up, up));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("concat splits gradients by channel range") {
  Rng rng(14);
  TensorD a({1, 2, 3, 3}), b({1, 3, 3, 3});
  fill_random(a, rng);
  fill_random(b, rng);
  auto res = check_gradients({&a, &b}, [](Tape<double>& t, const std::vector<int>& id) {
    const int cat = t.concat_c({id[0], id[1]});
    return t.sum_all(t.mul(cat, cat));
  });
  CHECK(res.max_rel_err < 1e-6);

  Tape<double> t;
  CHECK_THROWS_AS(t.concat_c({t.leaf(a), t.leaf(TensorD({1, 2, 4, 4}))}),
                  precondition_error);
}

TEST_CASE("elementwise and broadcast op gradients") {
  Rng rng(15);
  TensorD x({2, 4, 3, 3}), y({2, 4, 3, 3}), g({2, 4, 1, 1}), m({2, 1, 3, 3});
  fill_random(x, rng, 0.2, 1.5);
  fill_random(y, rng, 0.3, 1.7);  // positive so divide stays well-conditioned
  fill_random(g, rng, -1, 1);
  fill_random(m, rng, -1, 1);
  auto res = check_gradients(
      {&x, &y, &g, &m}, [](Tape<double>& t, const std::vector<int>& id) {
        const int s = t.add(t.mul(id[0], id[1]), t.sub(id[0], id[1]));
        const int d = t.divide(s, id[1]);
        const int cg = t.mul_bc_channel(d, id[2]);
        const int sg = t.mul_bc_spatial(cg, id[3]);
        const int act = t.silu(t.add_scalar(t.mul_scalar(sg, 0.7), 0.1));
        return t.mean_all(t.sigmoid(act));
      });
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("pooled statistics forwards and gradients") {
  Rng rng(16);
  TensorD x({2, 3, 4, 4});
  fill_random(x, rng);

  Tape<double> t;
  const int xid = t.leaf(x);
  const int gavg = t.global_avg_c(xid);
  const int gmax = t.global_max_c(xid);
  const int cmean = t.mean_over_c(xid);
  const int cmax = t.max_over_c(xid);
  CHECK(t.val(gavg).shape == Shape{2, 3, 1, 1});
  CHECK(t.val(gmax).shape == Shape{2, 3, 1, 1});
  CHECK(t.val(cmean).shape == Shape{2, 1, 4, 4});
  CHECK(t.val(cmax).shape == Shape{2, 1, 4, 4});
  double mx = -1e9, acc = 0;
  for (int i = 0; i < 4 * 4; ++i) {
    mx = std::max(mx, x.plane(0, 1)[i]);
    acc += x.plane(0, 1)[i];
  }
  CHECK(t.val(gmax).at(0, 1, 0, 0) == doctest::Approx(mx));
  CHECK(t.val(gavg).at(0, 1, 0, 0) == doctest::Approx(acc / 16));

  auto res = check_gradients({&x}, [](Tape<double>& tp, const std::vector<int>& id) {
    const int a = tp.global_avg_c(id[0]);
    const int b = tp.global_max_c(id[0]);
    const int c = tp.mean_over_c(id[0]);
    const int d = tp.max_over_c(id[0]);
    int obj = tp.add(tp.sum_all(tp.mul(a, a)), tp.sum_all(tp.mul(b, b)));
    obj = tp.add(obj, tp.sum_all(tp.mul(c, d)));
    return obj;
  });
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("abs gradient away from zero") {
  Rng rng(17);
  TensorD x({1, 2, 5, 5});
  fill_random(x, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < x.data.size(); i += 2) x.data[i] = -x.data[i];
  auto res = check_gradients({&x}, [](Tape<double>& t, const std::vector<int>& id) {
    return t.mean_all(t.abs_(id[0]));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("depthwise_valid matches manual correlation and its gradient") {
  Rng rng(18);
  TensorD x({1, 2, 5, 5});
  fill_random(x, rng);
  TensorD k({1, 1, 3, 3});
  fill_random(k, rng);

  Tape<double> t;
  const int y = t.depthwise_valid(t.leaf(x), k);
  CHECK(t.val(y).shape == Shape{1, 2, 3, 3});
  double manual = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) manual += k.at(0, 0, a, b) * x.at(0, 1, 1 + a, 2 + b);
  CHECK(t.val(y).at(0, 1, 1, 2) == doctest::Approx(manual));

  auto res = check_gradients({&x}, [&k](Tape<double>& tp, const std::vector<int>& id) {
    const int blurred = tp.depthwise_valid(id[0], k);
    return tp.sum_all(tp.mul(blurred, blurred));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("backward requires a scalar root") {
  Tape<double> t;
  const int x = t.leaf(TensorD({1, 1, 2, 2}), true);
  CHECK_THROWS_AS(t.backward(x), precondition_error);
}

TEST_CASE("gradients accumulate over shared consumers") {
  // y = x*x + x => dy/dx = 2x + 1
  Tape<double> t;
  TensorD x({1, 1, 1, 1});
  x.data[0] = 3.0;
  const int xid = t.leaf(x, true);
  const int obj = t.sum_all(t.add(t.mul(xid, xid), xid));
  t.backward(obj);
  CHECK(t.grad(xid).data[0] == doctest::Approx(7.0));
}
