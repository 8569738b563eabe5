#include <doctest.h>

#include <cmath>
#include <sstream>

#include "adod/error.hpp"
#include "adod/gradcheck.hpp"
#include "adod/ops.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace adod;
using testutil::random_tensor;

TEST_SUITE("tensor-core") {

TEST_CASE("tensor shape and serialization") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ValidationError);
  const Tensor t = random_tensor({2, 3, 4, 5}, 1);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().substr(0, 4) == "ADOD");
  const Tensor back = read_tensor(ss);
  CHECK(back == t);

  std::stringstream truncated(ss.str().substr(0, 40));
  CHECK_THROWS(read_tensor(truncated));
  std::stringstream bad(std::string("ADOD\x01\0\0\0", 8));
  CHECK_THROWS(read_tensor(bad));
}

TEST_CASE("conv2d hand cases") {
  Tape tape;
  Var x = tape.constant(Tensor({1, 1, 3, 3}, 1.0));
  Var k = tape.constant(Tensor({1, 1, 3, 3}, 1.0));
  for (auto algo : {ops::ConvAlgo::kDirect, ops::ConvAlgo::kIm2col}) {
    const Tensor y = ops::conv2d(x, k, std::nullopt, {1, 1, algo}).value();
    CHECK(y.at(0, 0, 1, 1) == 9.0);
    CHECK(y.at(0, 0, 0, 0) == 4.0);
    CHECK(y.at(0, 0, 2, 2) == 4.0);
    CHECK(y.at(0, 0, 0, 1) == 6.0);
  }

  Var xs = tape.constant(random_tensor({2, 3, 13, 13}, 2));
  Var k1 = tape.constant(random_tensor({8, 3, 1, 1}, 3));
  CHECK(ops::conv2d(xs, k1, std::nullopt).shape() == Shape{2, 8, 13, 13});

  Var zero = tape.constant(Tensor({4, 3, 3, 3}));
  Var bias = tape.constant(Tensor({4}, std::vector<double>{1, -2, 3, 0.5}));
  const Tensor yb = ops::conv2d(xs, zero, bias, {2, 1}).value();
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) CHECK(yb.at(1, c, i, j) == bias.value()[c]);

  CHECK_THROWS_AS(ops::conv2d(xs, tape.constant(Tensor({4, 2, 3, 3})), std::nullopt),
                  ValidationError);
}

TEST_CASE("conv2d paths agree with the reference loops") {
  struct Case {
    Shape x, k;
    std::size_t stride, pad;
  };
  const std::vector<Case> cases{{{2, 3, 9, 9}, {5, 3, 3, 3}, 1, 1},
                                {{1, 4, 8, 8}, {6, 4, 3, 3}, 2, 1},
                                {{2, 8, 5, 5}, {3, 8, 7, 7}, 1, 3},
                                {{1, 6, 6, 6}, {4, 6, 1, 1}, 1, 0},
                                {{1, 2, 40, 40}, {3, 2, 3, 3}, 1, 1},
                                {{1, 3, 1, 1}, {2, 3, 5, 5}, 1, 2}};
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    Tape tape;
    const Tensor x = random_tensor(c.x, seed++);
    const Tensor k = random_tensor(c.k, seed++);
    const Tensor b = random_tensor({c.k[0]}, seed++);
    const Tensor ref = oracle::conv2d(x, k, &b, c.stride, c.pad);
    for (auto algo : {ops::ConvAlgo::kDirect, ops::ConvAlgo::kIm2col}) {
      const Tensor y = ops::conv2d(tape.constant(x), tape.constant(k), tape.constant(b),
                                   {c.stride, c.pad, algo})
                           .value();
      CHECK(max_abs_diff(y, ref) < 1e-10);
    }
  }
}

TEST_CASE("1x1 conv equals per-pixel linear") {
  Tape tape;
  const Tensor x = random_tensor({2, 5, 4, 3}, 40);
  const Tensor k = random_tensor({7, 5, 1, 1}, 41);
  const Tensor b = random_tensor({7}, 42);
  const Tensor y = ops::conv2d(tape.constant(x), tape.constant(k), tape.constant(b)).value();
  Var wl = tape.constant(k.reshaped({7, 5}));
  Var bl = tape.constant(b);
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 3; ++w) {
        Tensor px({1, 5});
        for (std::size_t c = 0; c < 5; ++c) px[c] = x.at(n, c, h, w);
        const Tensor o = ops::linear(tape.constant(px), wl, bl).value();
        for (std::size_t c = 0; c < 7; ++c) worst = std::max(worst, std::abs(o[c] - y.at(n, c, h, w)));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("batchnorm train and eval") {
  Tape tape;
  Tensor rm({3}), rv({3}, 1.0);
  Tensor xc({2, 3, 2, 2});
  for (std::size_t i = 0; i < xc.size(); ++i) xc[i] = static_cast<double>(i / 4 % 3) + 1.5;
  Var g = tape.constant(Tensor({3}, 2.0));
  Var b = tape.constant(Tensor({3}, std::vector<double>{0.1, -0.2, 0.3}));
  const Tensor yc = ops::batchnorm2d(tape.constant(xc), g, b, rm, rv).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i) CHECK(yc.at(n, c, i / 2, i % 2) == b.value()[c]);

  const Tensor x = random_tensor({4, 3, 5, 5}, 50, -3, 5);
  Tensor m2({3}), v2({3}, 1.0);
  const Tensor y = ops::batchnorm2d(tape.constant(x), tape.constant(Tensor({3}, 1.0)),
                                    tape.constant(Tensor({3})), m2, v2)
                       .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, q = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) s += y.at(n, c, i / 5, i % 5);
    const double mean = s / 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) q += std::pow(y.at(n, c, i / 5, i % 5) - mean, 2);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(q / 100 - 1.0) < 1e-4);
  }

  // Scalar oracle in both modes; running stats move by the EMA with the
  // unbiased batch variance.
  const Tensor xs = random_tensor({2, 3, 4, 4}, 51);
  const Tensor gs = random_tensor({3}, 52, 0.5, 1.5), bs = random_tensor({3}, 53);
  Tensor rm3 = random_tensor({3}, 54), rv3 = random_tensor({3}, 55, 0.5, 2.0);
  const Tensor rm0 = rm3, rv0 = rv3;
  const Tensor ref_eval = oracle::batchnorm(xs, gs, bs, rm3, rv3, false, 1e-5);
  const Tensor yev = ops::batchnorm2d(tape.constant(xs), tape.constant(gs), tape.constant(bs),
                                      rm3, rv3, {ops::Mode::kEval})
                         .value();
  CHECK(max_abs_diff(yev, ref_eval) < 1e-12);
  CHECK(rm3 == rm0);
  const Tensor ref_train = oracle::batchnorm(xs, gs, bs, rm3, rv3, true, 1e-5);
  const Tensor ytr = ops::batchnorm2d(tape.constant(xs), tape.constant(gs), tape.constant(bs),
                                      rm3, rv3)
                         .value();
  CHECK(max_abs_diff(ytr, ref_train) < 1e-12);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, q = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) s += xs.at(n, c, i / 4, i % 4);
    const double mean = s / 32;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) q += std::pow(xs.at(n, c, i / 4, i % 4) - mean, 2);
    CHECK(rm3[c] == doctest::Approx(0.9 * rm0[c] + 0.1 * mean).epsilon(1e-14));
    CHECK(rv3[c] == doctest::Approx(0.9 * rv0[c] + 0.1 * q / 31).epsilon(1e-14));
  }
}

TEST_CASE("activations") {
  Tape tape;
  Var x = tape.constant(Tensor({4}, std::vector<double>{0.0, -3.5, 2.0, -2.0}));
  const Tensor r = ops::relu(x).value();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  CHECK(ops::sigmoid(x).value()[0] == 0.5);
  CHECK(ops::leaky_relu(x, 0.1).value()[3] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK_THROWS_AS(ops::leaky_relu(x, 1.5), ValidationError);
  Var big = tape.constant(Tensor({2}, std::vector<double>{-800.0, 800.0}));
  const Tensor s = ops::sigmoid(big).value();
  CHECK(s.all_finite());
  CHECK(s[1] == 1.0);
}

TEST_CASE("pooling, upsampling, concat, slice") {
  Tape tape;
  CHECK(ops::global_avg_pool(tape.constant(Tensor({4, 16, 13, 13}, 2.5))).value() ==
        Tensor({4, 16, 1, 1}, 2.5));
  const Tensor r = random_tensor({2, 3, 4, 5}, 60);
  const Tensor p = ops::global_avg_pool(tape.constant(r)).value();
  CHECK(max_abs_diff(p, oracle::global_avg_pool(r)) < 1e-12);

  CHECK(ops::upsample_nearest2x(tape.constant(Tensor({1, 1, 1, 1}, 7.0))).value() ==
        Tensor({1, 1, 2, 2}, 7.0));
  CHECK(ops::upsample_nearest2x(tape.constant(Tensor({1, 8, 13, 13}))).shape() ==
        Shape{1, 8, 26, 26});
  const Tensor up =
      ops::upsample_nearest2x(tape.constant(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})))
          .value();
  CHECK(up == Tensor({1, 1, 4, 4}, std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3,
                                                       4, 4}));
  const Tensor u2 = ops::upsample_nearest2x(tape.constant(r)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 5; ++w) {
          const double m = (u2.at(n, c, 2 * h, 2 * w) + u2.at(n, c, 2 * h + 1, 2 * w) +
                            u2.at(n, c, 2 * h, 2 * w + 1) + u2.at(n, c, 2 * h + 1, 2 * w + 1)) /
                           4;
          CHECK(m == r.at(n, c, h, w));
        }

  Var a = tape.constant(random_tensor({1, 4, 26, 26}, 61));
  Var b = tape.constant(random_tensor({1, 8, 26, 26}, 62));
  Var c = tape.constant(random_tensor({1, 2, 26, 26}, 63));
  Var ab = ops::concat_channels(a, b);
  CHECK(ab.shape() == Shape{1, 12, 26, 26});
  for (std::size_t k = 0; k < 8; ++k) CHECK(ab.value().at(0, 4 + k, 3, 5) == b.value().at(0, k, 3, 5));
  CHECK(ops::concat_channels(ab, c).value() ==
        ops::concat_channels(a, ops::concat_channels(b, c)).value());
  Var z = tape.constant(Tensor({1, 8, 26, 26}));
  CHECK(ops::slice_channels(ops::concat_channels(a, z), 0, 4).value() == a.value());
  CHECK_THROWS_AS(ops::concat_channels(a, tape.constant(Tensor({1, 2, 13, 13}))), ValidationError);
}

TEST_CASE("linear") {
  Tape tape;
  const Tensor y = ops::linear(tape.constant(Tensor({1, 2}, std::vector<double>{1, 2})),
                               tape.constant(Tensor({1, 2}, std::vector<double>{3, 4})),
                               tape.constant(Tensor({1}, 5.0)))
                       .value();
  CHECK(y[0] == 16.0);
  const Tensor x = random_tensor({3, 4}, 70);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  CHECK(ops::linear(tape.constant(x), tape.constant(eye), tape.constant(Tensor({4}))).value() == x);
  const Tensor yb = ops::linear(tape.constant(x), tape.constant(Tensor({2, 4})),
                                tape.constant(Tensor({2}, std::vector<double>{1.5, -1})))
                        .value();
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(yb[n * 2] == 1.5);
    CHECK(yb[n * 2 + 1] == -1.0);
  }
}

TEST_CASE("gradients accumulate and frozen parameters get none") {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor({2}, std::vector<double>{1, 2}));
  Parameter& f = store.add("f", Tensor({2}, 1.0), false);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    tape.backward(ops::sum(ops::mul(tape.parameter(w), tape.parameter(f))));
  }
  REQUIRE(w.grad);
  CHECK((*w.grad)[0] == 2.0);
  CHECK_FALSE(f.grad);
  store.zero_grad();
  CHECK((*w.grad)[1] == 0.0);
  CHECK_THROWS(store.add("w", Tensor({1})));
}

TEST_CASE("grad_check examples") {
  ParameterStore store;
  Parameter& x = store.add("x", random_tensor({3, 6}, 80));
  Parameter& w = store.add("w", random_tensor({4, 6}, 81));
  Parameter& b = store.add("b", random_tensor({4}, 82));
  const auto lin = grad_check({&x, &w, &b}, [&](Tape& t) {
    return ops::linear(t.parameter(x), t.parameter(w), t.parameter(b));
  });
  CHECK(lin.passed());
  CHECK(lin.max_rel_error() < 1e-6);

  const auto constant = grad_check({&x}, [&](Tape& t) {
    t.parameter(x);
    return t.constant(Tensor({2}, 3.0));
  });
  CHECK(constant.passed());
  CHECK(constant.max_rel_error() == 0.0);

  Parameter& img = store.add("img", random_tensor({2, 3, 5, 5}, 83));
  Parameter& k = store.add("k", random_tensor({4, 3, 3, 3}, 84, -0.5, 0.5));
  Parameter& g = store.add("g", random_tensor({4}, 85, 0.5, 1.5));
  Parameter& be = store.add("be", random_tensor({4}, 86));
  Tensor rm({4}), rv({4}, 1.0);
  const auto chain = grad_check({&img, &k, &g, &be}, [&](Tape& t) {
    Tensor m = rm, v = rv;
    return ops::relu(ops::batchnorm2d(ops::conv2d(t.parameter(img), t.parameter(k), std::nullopt,
                                                  {1, 1}),
                                      t.parameter(g), t.parameter(be), m, v));
  });
  CHECK(chain.passed());
  CHECK(chain.max_rel_error() < 1e-4);

  // A wrong backward must be caught.
  const auto wrong = grad_check({&x}, [&](Tape& t) {
    Var v = t.parameter(x);
    return t.record(v.value(), {v}, [v](Tape& tp, const Tensor& go) {
      Tensor g2 = go;
      g2.scale_inplace(2.0);
      if (Tensor* s = tp.grad_sink(v)) s->add_inplace(g2);
    });
  });
  CHECK_FALSE(wrong.passed());
}

TEST_CASE("every op is finite and matches finite differences") {
  ParameterStore store;
  Parameter& a = store.add("a", random_tensor({2, 3, 4, 4}, 90));
  Parameter& b = store.add("b", random_tensor({2, 2, 4, 4}, 91));
  Parameter& gate = store.add("gate", random_tensor({2, 3, 1, 1}, 92, 0.1, 0.9));
  const auto rep = grad_check({&a, &b, &gate}, [&](Tape& t) {
    Var x = t.parameter(a), y = t.parameter(b);
    Var cat = ops::concat_channels(x, y);
    Var up = ops::upsample_nearest2x(ops::leaky_relu(cat, 0.1));
    Var pooled = ops::global_avg_pool(ops::sigmoid(up));
    Var scaled = ops::channel_scale(ops::slice_channels(cat, 1, 3), t.parameter(gate));
    Var mixed = ops::add(scaled, ops::mul(scaled, scaled));
    return ops::concat_channels(pooled, ops::global_avg_pool(mixed));
  });
  CHECK(rep.passed());
  CHECK(rep.max_rel_error() < 1e-4);
}

TEST_CASE("ops are deterministic") {
  const Tensor x = random_tensor({2, 3, 7, 7}, 95);
  const Tensor k = random_tensor({4, 3, 3, 3}, 96);
  Tape t1, t2;
  CHECK(ops::conv2d(t1.constant(x), t1.constant(k), std::nullopt, {1, 1}).value() ==
        ops::conv2d(t2.constant(x), t2.constant(k), std::nullopt, {1, 1}).value());
}

}
