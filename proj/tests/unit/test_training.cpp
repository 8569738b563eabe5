#include <doctest.h>

#include <cmath>
#include <limits>

#include "adod/error.hpp"
#include "adod/postprocess.hpp"
#include "adod/training.hpp"
#include "util.hpp"

using namespace adod;

namespace {

NetworkSpec tiny() {
  NetworkSpec s;
  s.input_width = 64;
  s.stage_widths = {4, 8, 16, 32, 64};
  return s;
}

std::array<Var, kNumScales> constant_heads(Tape& tape, const std::array<Tensor, kNumScales>& h) {
  return {tape.constant(h[0]), tape.constant(h[1]), tape.constant(h[2])};
}

std::array<Tensor, kNumScales> filled_heads(const NetworkSpec& spec, std::size_t n, double v) {
  std::array<Tensor, kNumScales> h;
  for (std::size_t s = 0; s < kNumScales; ++s)
    h[s] = Tensor({n, spec.head_channels(), spec.grid_size(s), spec.grid_size(s)}, v);
  return h;
}

// Writes the encoded targets into otherwise negative heads.
std::array<Tensor, kNumScales> encode(const Targets& t, const NetworkSpec& spec) {
  auto h = filled_heads(spec, t.batch, -100.0);
  const std::size_t per = 5 + spec.num_classes;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const ScaleTargets& st = t.scales[s];
    for (std::size_t n = 0; n < t.batch; ++n)
      for (std::size_t a = 0; a < kAnchorsPerScale; ++a)
        for (std::size_t cy = 0; cy < st.grid; ++cy)
          for (std::size_t cx = 0; cx < st.grid; ++cx) {
            const std::size_t i = st.slot(n, a, cy, cx);
            if (!st.assigned[i]) continue;
            h[s].at(n, a * per + 0, cy, cx) = st.tx[i];
            h[s].at(n, a * per + 1, cy, cx) = st.ty[i];
            h[s].at(n, a * per + 2, cy, cx) = st.tw[i];
            h[s].at(n, a * per + 3, cy, cx) = st.th[i];
            h[s].at(n, a * per + 4, cy, cx) = 30.0;
            h[s].at(n, a * per + 5 + st.class_id[i], cy, cx) = 30.0;
          }
  }
  return h;
}

std::vector<LoadedSample> toy_data(std::size_t n, std::size_t domains, std::uint64_t seed,
                                   const testutil::TempDir& dir) {
  SyntheticConfig cfg;
  cfg.seed = seed;
  cfg.num_images = n;
  cfg.num_domains = domains;
  const auto m = generate_synthetic_dataset(cfg, dir.path().string());
  return load_samples(m, 64);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation and key values") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.batch_size == 32);
  CHECK(c.epochs == 300);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lambda_noobj = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.learning_rate = 0.25;
  c.seed = 99;
  const TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
  CHECK(back.learning_rate == 0.25);
  CHECK(back.seed == 99);
}

TEST_CASE("target assignment") {
  const NetworkSpec spec = tiny();
  const auto anchors = spec.resolved_anchors();
  // Anchor 4 lives on the mid scale (grid 4) as its second entry.
  const double S = 4, W = 64;
  const GroundTruthBox g{1, 2.5 / S, 1.5 / S, anchors[4].w / W, anchors[4].h / W};
  const Targets t = build_targets({{g}}, spec);
  const ScaleTargets& st = t.scales[1];
  const std::size_t i = st.slot(0, 1, 1, 2);
  REQUIRE(st.assigned[i]);
  CHECK(st.tx[i] == 0.0);
  CHECK(st.ty[i] == 0.0);
  CHECK(std::abs(st.tw[i]) < 1e-15);
  CHECK(std::abs(st.th[i]) < 1e-15);
  CHECK(st.class_id[i] == 1);
  std::size_t total = 0;
  for (const auto& sc : t.scales) total += std::count(sc.assigned.begin(), sc.assigned.end(), 1);
  CHECK(total == 1);

  const Targets empty = build_targets({{}, {}}, spec);
  for (const auto& sc : empty.scales) {
    CHECK(std::count(sc.assigned.begin(), sc.assigned.end(), 1) == 0);
    CHECK(std::count(sc.ignored.begin(), sc.ignored.end(), 1) == 0);
  }

  const Targets tiny_box = build_targets({{{0, 0.5, 0.5, 1e-9, 0.2}}}, spec);
  CHECK(tiny_box.clamp_warnings == 1);
}

TEST_CASE("targets decode back to the ground truth") {
  NetworkSpec spec = tiny();
  spec.input_width = 128;
  Rng rng(2024);
  double worst = 0;
  for (int batch = 0; batch < 5; ++batch) {
    std::vector<std::vector<GroundTruthBox>> gts;
    for (int n = 0; n < 40; ++n)
      gts.push_back({{rng.below(5), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99),
                      rng.uniform(0.02, 0.9), rng.uniform(0.02, 0.9)}});
    const auto heads = encode(build_targets(gts, spec), spec);
    std::vector<std::vector<Detection>> found(gts.size());
    for (std::size_t s = 0; s < kNumScales; ++s) {
      const auto d = decode_predictions(heads[s], spec.scale_anchors(s), spec.num_classes,
                                        spec.input_width, 0.5, s);
      for (std::size_t n = 0; n < gts.size(); ++n)
        found[n].insert(found[n].end(), d[n].begin(), d[n].end());
    }
    for (std::size_t n = 0; n < gts.size(); ++n) {
      REQUIRE(found[n].size() == 1);
      const BBox want = gts[n][0].to_bbox(), got = found[n][0].bbox;
      CHECK(found[n][0].class_id == gts[n][0].class_id);
      for (double e : {got.x_min - want.x_min, got.y_min - want.y_min, got.x_max - want.x_max,
                       got.y_max - want.y_max})
        worst = std::max(worst, std::abs(e));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("detection loss examples") {
  const NetworkSpec spec = tiny();
  const TrainConfig cfg;
  const auto anchors = spec.resolved_anchors();
  const GroundTruthBox g{0, 2.5 / 4, 1.5 / 4, anchors[4].w / 64, anchors[4].h / 64};
  const Targets t = build_targets({{g}}, spec);
  {
    Tape tape;
    const auto l = yolo_loss(constant_heads(tape, encode(t, spec)), t, spec, cfg);
    CHECK(l.parts.coord == 0.0);
    CHECK(l.parts.obj < 1e-8);
    CHECK(l.parts.total == doctest::Approx(LossBreakdown::weighted_total(l.parts, cfg)).epsilon(1e-12));
  }
  {
    auto h = filled_heads(spec, 1, 0.0);
    h[1].at(0, 1 * 10 + 4, 1, 2) = 20.0;
    h[1].at(0, 1 * 10 + 0, 1, 2) = 1.0;
    Tape tape;
    const auto l = yolo_loss(constant_heads(tape, h), t, spec, cfg);
    CHECK(l.parts.obj < 1e-8);
    CHECK(l.parts.coord > 0.0);
  }
  {
    const Targets none = build_targets({{}, {}}, spec);
    Tape tape;
    const auto l = yolo_loss(constant_heads(tape, filled_heads(spec, 2, -1.0)), none, spec, cfg);
    CHECK(l.parts.coord == 0.0);
    CHECK(l.parts.obj == 0.0);
    CHECK(l.parts.cls == 0.0);
    CHECK(l.parts.noobj == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
    CHECK(l.parts.total == cfg.lambda_noobj * l.parts.noobj);
  }
}

TEST_CASE("domain loss examples") {
  Tape tape;
  std::array<Var, kNumScales> uniform{tape.constant(Tensor({3, 2})), tape.constant(Tensor({3, 2})),
                                      tape.constant(Tensor({3, 2}))};
  CHECK(domain_loss(uniform, {0, 1, 1}, 1.0).cross_entropy == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Tensor sure({2, 2}, std::vector<double>{20, 0, 0, 20});
  std::array<Var, kNumScales> conf{tape.constant(sure), tape.constant(sure), tape.constant(sure)};
  CHECK(domain_loss(conf, {0, 1}, 1.0).cross_entropy < 1e-8);
  CHECK_THROWS_AS(domain_loss(conf, {0, 2}, 1.0), ValidationError);

  ParameterStore store;
  Parameter& z = store.add("z", testutil::random_tensor({2, 3}, 1));
  Tape t2;
  Var v = t2.parameter(z);
  const auto dl = domain_loss({v, v, v}, {0, 2}, 0.0);
  CHECK(dl.term.value()[0] == 0.0);
  t2.backward(dl.term);
  for (std::size_t i = 0; i < z.grad->size(); ++i) CHECK((*z.grad)[i] == 0.0);
}

TEST_CASE("adam") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({1}, 0.5));
  AdamState st;
  const AdamOptions o;
  p.grad = Tensor({1}, 0.0);
  adam_step({&p}, st, o);
  CHECK(p.value[0] == 0.5);
  CHECK(st.t == 1);

  Parameter& q = store.add("q", Tensor({1}, 0.0));
  AdamState s2;
  q.grad = Tensor({1}, 1.0);
  adam_step({&q}, s2, o);
  CHECK(q.value[0] == doctest::Approx(-9.99999990e-4).epsilon(1e-9));
  adam_step({&q}, s2, o);
  double m = 0, v = 0, th = 0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    th -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(std::abs(q.value[0] - th) < 1e-15);

  Parameter& r = store.add("r", Tensor({3}, 1.0));
  AdamState s3;
  r.grad = Tensor({3}, std::vector<double>{0.3, -2.0, 1e-3});
  adam_step({&r}, s3, {0.01, 0.0, 0.0, 1e-8});
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = (*r.grad)[i];
    CHECK(std::abs(r.value[i] - (1.0 - 0.01 * g / (std::abs(g) + 1e-8))) < 1e-15);
  }
}

TEST_CASE("training loop") {
  testutil::TempDir dir("train");
  const auto data = toy_data(4, 1, 3, dir);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    cfg.learning_rate = 0.0;
    Network net(tiny(), 1);
    std::vector<Tensor> before;
    for (const Parameter* p : net.store().parameters()) before.push_back(p->value);
    train(net, data, cfg);
    const auto after = net.store().parameters();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i]->value == before[i]);
  }
  SUBCASE("metrics and checkpoints are reproducible") {
    cfg.checkpoint_every = 2;
    testutil::TempDir out1("run1"), out2("run2");
    Network a(tiny(), 1), b(tiny(), 1);
    train(a, data, cfg, {out1.path().string(), nullptr});
    train(b, data, cfg, {out2.path().string(), nullptr});
    auto loss_columns = [](const std::string& csv) {
      std::string out;
      std::istringstream is(csv);
      std::string line;
      while (std::getline(is, line)) out += line.substr(0, line.rfind(',')) + "\n";
      return out;
    };
    const std::string m1 = testutil::read_file(out1.path() / "metrics.csv");
    CHECK(m1.substr(0, m1.find('\n')) == metrics_csv_header());
    CHECK(std::count(m1.begin(), m1.end(), '\n') == 4);
    CHECK(loss_columns(m1) == loss_columns(testutil::read_file(out2.path() / "metrics.csv")));
    CHECK(std::filesystem::exists(out1.path() / "checkpoint_epoch0002.ckpt"));
    CHECK(testutil::read_file(out1.path() / "final.ckpt") ==
          testutil::read_file(out2.path() / "final.ckpt"));
  }
  SUBCASE("one image overfits") {
    const std::vector<LoadedSample> one{data[0]};
    cfg.epochs = 50;
    cfg.batch_size = 1;
    cfg.learning_rate = 3e-3;
    Network net(tiny(), 2);
    const auto res = train(net, one, cfg);
    CHECK(res.history.back().loss.total < 0.5 * res.history.front().loss.total);
    for (const auto& e : res.history) {
      CHECK(e.loss.coord >= 0);
      CHECK(e.loss.noobj >= 0);
      CHECK(e.loss.total == doctest::Approx(LossBreakdown::weighted_total(e.loss, cfg)).epsilon(1e-12));
    }
  }
  SUBCASE("nonfinite loss aborts naming the batch") {
    Network net(tiny(), 1);
    net.store().find("backbone.stem.conv.weight")->value[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      train(net, data, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK_MESSAGE(std::string(e.what()).find("batch index 0") != std::string::npos, std::string(e.what()));
    }
  }
}

TEST_CASE("zero-weight domain branch is a pure superset") {
  testutil::TempDir dir("superset");
  const auto data = toy_data(4, 2, 8, dir);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lambda_domain = 0.0;
  NetworkSpec with = tiny();
  with.use_domain = true;
  Network a(tiny(), 3), b(with, 3);
  const auto ra = train(a, data, cfg), rb = train(b, data, cfg);
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].loss.total == rb.history[e].loss.total);
    CHECK(ra.history[e].loss.coord == rb.history[e].loss.coord);
  }
  for (const Parameter* p : a.store().parameters())
    CHECK(b.store().find(p->name)->value == p->value);
}

TEST_CASE("reversal negates trunk gradients of the domain loss") {
  testutil::TempDir dir("grl");
  const auto data = toy_data(2, 2, 9, dir);
  NetworkSpec with = tiny();
  with.use_domain = true;
  Network net(with, 4);
  const Tensor images = stack_images({&data[0].image, &data[1].image});
  auto trunk_grads = [&](DomainCoupling c) {
    net.store().zero_grad();
    Tape tape;
    ForwardOptions fo;
    fo.grl_lambda = 1.0;
    fo.coupling = c;
    const auto out = net.forward(tape, images, fo);
    tape.backward(domain_loss(*out.domain_logits, {data[0].domain_id, data[1].domain_id}, 1.0).term);
    std::vector<Tensor> g;
    for (const Parameter* p : net.store().parameters())
      if (p->name.rfind("domain.", 0) != 0 && p->grad) g.push_back(*p->grad);
    return g;
  };
  const auto rev = trunk_grads(DomainCoupling::kReversed);
  const auto dir_g = trunk_grads(DomainCoupling::kDirect);
  REQUIRE(rev.size() == dir_g.size());
  double worst = 0, norm = 0;
  for (std::size_t i = 0; i < rev.size(); ++i)
    for (std::size_t j = 0; j < rev[i].size(); ++j) {
      worst = std::max(worst, std::abs(rev[i][j] + dir_g[i][j]));
      norm = std::max(norm, std::abs(rev[i][j]));
    }
  CHECK(norm > 0);
  CHECK(worst < 1e-12);
}

}
