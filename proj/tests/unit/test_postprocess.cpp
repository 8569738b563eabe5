#include <doctest.h>

#include <cmath>
#include <sstream>

#include "adod/error.hpp"
#include "adod/postprocess.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace adod;

namespace {

BBox random_box(Rng& rng) {
  const double x0 = rng.uniform(0, 0.8), y0 = rng.uniform(0, 0.8);
  return {x0, y0, x0 + rng.uniform(0.01, 0.2), y0 + rng.uniform(0.01, 0.2)};
}

std::vector<Detection> random_set(Rng& rng, std::size_t n) {
  std::vector<Detection> d;
  for (std::size_t i = 0; i < n; ++i) {
    Detection x;
    x.bbox = random_box(rng);
    x.class_id = rng.below(3);
    // Coarse scores force ties through the tie-breaking rules.
    x.score = rng.below(2) ? std::round(rng.uniform() * 10) / 10 : rng.uniform();
    d.push_back(x);
  }
  return d;
}

}  // namespace

TEST_SUITE("postprocess") {

TEST_CASE("iou") {
  const BBox a{0, 0, .2, .2}, b{.1, .1, .3, .3};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou({0, 0, .1, .1}, {.5, .5, .6, .6}) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou({.3, .3, .3, .3}, {.3, .3, .3, .3}) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const BBox outer = random_box(rng);
    const BBox inner{outer.x_min + 0.25 * outer.width(), outer.y_min + 0.1 * outer.height(),
                     outer.x_max - 0.3 * outer.width(), outer.y_max};
    CHECK(std::abs(iou(inner, outer) - inner.area() / outer.area()) < 1e-12);
    const BBox c = random_box(rng);
    CHECK(iou(outer, c) == iou(c, outer));
  }
}

TEST_CASE("decode") {
  const std::size_t K = 5, S = 13, W = 416;
  const std::array<Anchor, 3> anchors{Anchor{116, 90}, Anchor{156, 198}, Anchor{373, 326}};
  Tensor head({1, 3 * (5 + K), S, S}, -100.0);
  CHECK(decode_predictions(head, anchors, K, W, 0.01)[0].empty());
  // Anchor 0, cell (0,0): tx=ty=tw=th=0, objectness 0 and class 2 at +10.
  for (std::size_t c = 0; c < 4; ++c) head.at(0, c, 0, 0) = 0.0;
  head.at(0, 4, 0, 0) = 0.0;
  head.at(0, 5 + 2, 0, 0) = 10.0;
  const auto dets = decode_predictions(head, anchors, K, W, 0.25, 1);
  REQUIRE(dets[0].size() == 1);
  const Detection& d = dets[0][0];
  CHECK(d.class_id == 2);
  CHECK(d.scale_origin == 1);
  CHECK(d.score == doctest::Approx(0.5 * oracle::sigmoid(10.0)).epsilon(1e-14));
  // Clamped at the left edge, so check the right half-width.
  CHECK(std::abs(d.bbox.x_max - (0.5 / 13 + 116.0 / 416 / 2)) < 1e-12);
  CHECK(std::abs(d.bbox.y_max - (0.5 / 13 + 90.0 / 416 / 2)) < 1e-12);
  CHECK(d.bbox.x_min == 0.0);

  Tensor centered({1, 3 * (5 + K), S, S}, -100.0);
  for (std::size_t c = 0; c < 5; ++c) centered.at(0, 10 + c, 6, 6) = 0.0;
  centered.at(0, 10 + 5, 6, 6) = 20.0;
  const auto dc = decode_predictions(centered, anchors, K, W, 0.25);
  REQUIRE(dc[0].size() == 1);
  CHECK(std::abs(dc[0][0].bbox.width() - 156.0 / 416) < 1e-12);
  CHECK(std::abs(dc[0][0].bbox.height() - 198.0 / 416) < 1e-12);

  CHECK_THROWS_AS(decode_predictions(Tensor({1, 29, S, S}), anchors, K, W, 0.1), ValidationError);
}

TEST_CASE("threshold filtering is monotone") {
  const std::array<Anchor, 3> anchors{Anchor{10, 12}, Anchor{20, 18}, Anchor{30, 40}};
  const Tensor head = testutil::random_tensor({2, 3 * 8, 4, 4}, 9, -4, 4);
  const auto lo = decode_predictions(head, anchors, 3, 64, 0.05);
  const auto hi = decode_predictions(head, anchors, 3, 64, 0.3);
  for (std::size_t n = 0; n < 2; ++n)
    for (const auto& d : hi[n]) CHECK(std::find(lo[n].begin(), lo[n].end(), d) != lo[n].end());
}

TEST_CASE("nms examples") {
  Detection a{{.1, .1, .4, .4}, 0, .9, 0}, b{{.1, .1, .4, .4}, 0, .8, 0};
  CHECK(nms({a}, 0.5) == std::vector<Detection>{a});
  CHECK(nms({b, a}, 0.5) == std::vector<Detection>{a});
  Detection c = b;
  c.class_id = 1;
  CHECK(nms({c, a}, 0.5).size() == 2);
  CHECK_THROWS_AS(nms({a}, 0.0), ValidationError);
}

TEST_CASE("nms matches the brute-force reference and is idempotent") {
  Rng rng(123);
  for (int inst = 0; inst < 300; ++inst) {
    const auto d = random_set(rng, rng.below(51));
    const double tau = rng.uniform(0.05, 1.0);
    const auto kept = nms(d, tau);
    CHECK(kept == oracle::nms(d, tau));
    CHECK(nms(kept, tau) == kept);
  }
}

TEST_CASE("detection dump round trip") {
  std::vector<DumpRecord> recs{{0, {{0.1, 0.2, 0.3, 0.4}, 2, 0.875, 0}},
                               {3, {{0, 0, 1, 1}, 0, 0.5, 0}}};
  std::ostringstream out;
  write_detection_dump(out, recs);
  CHECK(out.str() == "0 2 0.875000 0.100000 0.200000 0.300000 0.400000\n"
                     "3 0 0.500000 0.000000 0.000000 1.000000 1.000000\n");
  std::istringstream in(out.str());
  const auto back = read_detection_dump(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 0);
  CHECK(back[0].det.class_id == 2);
  CHECK(back[0].det.bbox.y_max == 0.4);
  std::istringstream bad("0 1 0.5 0.1\n");
  CHECK_THROWS_AS(read_detection_dump(bad), ValidationError);
}

}
