#include "adod/verify.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "adod/blocks.hpp"
#include "adod/error.hpp"
#include "adod/network.hpp"
#include "adod/ops.hpp"
#include "adod/rng.hpp"
#include "adod/training.hpp"

namespace adod {

Var faulty_identity(Var x, double factor) {
  return x.tape().record(x.value(), {x}, [x, factor](Tape& t, const Tensor& g) {
    if (Tensor* d = t.grad_sink(x))
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += factor * g[i];
  });
}

const std::vector<std::string>& gradcheck_categories() {
  static const std::vector<std::string> c{
      "conv2d",           "batchnorm2d",       "activation",     "shape_ops",
      "linear",           "gradient_reversal", "channel_attention", "residual_block",
      "domain_head",      "detection_loss",    "domain_loss",    "full_chain"};
  return c;
}

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, const std::string& name,
                     double lo = -1.0, double hi = 1.0) {
  Rng rng(derive_seed(seed, name));
  return Tensor::uniform(shape, rng, lo, hi);
}

// Resets BN affine parameters away from (1, 0) so their gradients are
// exercised with generic values.
void jitter_affine(ParameterStore& store, std::uint64_t seed) {
  for (Parameter* p : store.parameters()) {
    const std::string& n = p->name;
    if (n.size() > 6 && n.compare(n.size() - 6, 6, ".gamma") == 0)
      p->value = random_tensor(p->value.shape(), seed, n, 0.5, 1.5);
    else if (n.size() > 5 && n.compare(n.size() - 5, 5, ".beta") == 0)
      p->value = random_tensor(p->value.shape(), seed, n, -0.5, 0.5);
    else if (n.size() > 5 && n.compare(n.size() - 5, 5, ".bias") == 0)
      p->value = random_tensor(p->value.shape(), seed, n, -0.2, 0.2);
  }
}

struct Case {
  std::string category;
  std::string op;
  std::function<GradCheckReport(const GradCheckOptions&, bool fault)> run;
};

Var maybe_fault(Var v, bool fault) { return fault ? faulty_identity(v) : v; }

std::vector<Case> block_cases(std::uint64_t seed) {
  std::vector<Case> cases;

  cases.push_back({"conv2d", "conv2d", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 3, 6, 5}, seed, "conv.x"));
    auto& k = s.add("kernel", random_tensor({4, 3, 3, 3}, seed, "conv.k"));
    auto& b = s.add("bias", random_tensor({4}, seed, "conv.b"));
    auto& k1 = s.add("kernel_1x1", random_tensor({2, 4, 1, 1}, seed, "conv.k1"));
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      ops::ConvOptions direct{2, 1, ops::ConvAlgo::kDirect};
      ops::ConvOptions lowered{1, 1, ops::ConvAlgo::kIm2col};
      Var y = ops::conv2d(t.parameter(x), t.parameter(k), t.parameter(b), direct);
      Var z = ops::conv2d(t.parameter(x), t.parameter(k), t.parameter(b), lowered);
      Var w = ops::conv2d(z, t.parameter(k1), std::nullopt);
      return maybe_fault(ops::add(ops::global_avg_pool(y), ops::global_avg_pool(
                                      ops::concat_channels(w, w))), fault);
    }), o);
  }});

  cases.push_back({"batchnorm2d", "batchnorm2d", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({3, 2, 3, 3}, seed, "bn.x", -2.0, 2.0));
    auto& g = s.add("gamma", random_tensor({2}, seed, "bn.g", 0.5, 1.5));
    auto& b = s.add("beta", random_tensor({2}, seed, "bn.b"));
    Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      return maybe_fault(
          ops::batchnorm2d(t.parameter(x), t.parameter(g), t.parameter(b), rm, rv, {}), fault);
    }), o);
  }});

  cases.push_back({"activation", "apply_activation", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 3, 4, 4}, seed, "act.x", -3.0, 3.0));
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      Var v = t.parameter(x);
      Var r = ops::relu(v);
      Var l = ops::leaky_relu(v, 0.1);
      Var g = ops::sigmoid(v);
      return maybe_fault(ops::concat_channels(ops::concat_channels(r, l), g), fault);
    }), o);
  }});

  cases.push_back({"shape_ops", "upsample_nearest2x", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& a = s.add("a", random_tensor({2, 2, 3, 3}, seed, "shape.a"));
    auto& b = s.add("b", random_tensor({2, 3, 6, 6}, seed, "shape.b"));
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      Var up = ops::upsample_nearest2x(t.parameter(a));
      Var cat = ops::concat_channels(up, t.parameter(b));
      Var part = ops::slice_channels(cat, 1, 3);
      Var gate = ops::sigmoid(ops::global_avg_pool(part));
      return maybe_fault(ops::mul(ops::channel_scale(part, gate), part), fault);
    }), o);
  }});

  cases.push_back({"linear", "linear", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({3, 5}, seed, "lin.x"));
    auto& w = s.add("weight", random_tensor({4, 5}, seed, "lin.w"));
    auto& b = s.add("bias", random_tensor({4}, seed, "lin.b"));
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      return maybe_fault(ops::linear(t.parameter(x), t.parameter(w), t.parameter(b)), fault);
    }), o);
  }});

  cases.push_back({"gradient_reversal", "gradient_reversal",
                   [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 3, 2, 2}, seed, "grl.x"));
    const Tensor w = random_tensor({3, 3, 1, 1}, seed, "grl.w");
    constexpr double kLambda = 0.7;
    GradCheckOptions reversed = o;
    reversed.numeric_scale = -kLambda;
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      Var r = maybe_fault(ops::gradient_reversal(t.parameter(x), kLambda), fault);
      Var y = ops::conv2d(ops::sigmoid(r), t.constant(w), std::nullopt);
      return ops::mul(y, y);
    }), reversed);
  }});

  cases.push_back({"channel_attention", "channel_attention_forward",
                   [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 8, 4, 4}, seed, "ca.x"));
    ChannelAttentionBlock block(s, "attention", 8, 4, true, seed);
    jitter_affine(s, seed);
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      return maybe_fault(block.forward(t.parameter(x)), fault);
    }), o);
  }});

  cases.push_back({"residual_block", "residual_block_forward",
                   [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 4, 4, 4}, seed, "rb.x"));
    ResidualBlock block(s, "residual", 4, 3, seed);
    jitter_affine(s, seed);
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      return maybe_fault(block.forward(t.parameter(x), ops::Mode::kTrain), fault);
    }), o);
  }});

  cases.push_back({"domain_head", "domain_classifier_forward",
                   [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    auto& x = s.add("x", random_tensor({2, 4, 5, 5}, seed, "dc.x"));
    DomainClassifierHead head(s, "domain", 4, 3, 2, seed);
    jitter_affine(s, seed);
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      return maybe_fault(head.forward(t.parameter(x)), fault);
    }), o);
  }});

  cases.push_back({"detection_loss", "yolo_loss", [seed](const GradCheckOptions& o, bool fault) {
    NetworkSpec spec;
    spec.input_width = 64;
    spec.num_classes = 2;
    ParameterStore s;
    std::array<Parameter*, kNumScales> heads{};
    for (std::size_t sc = 0; sc < kNumScales; ++sc) {
      const std::size_t g = spec.grid_size(sc);
      heads[sc] = &s.add(std::string("head.") + kScaleNames[sc],
                         random_tensor({2, spec.head_channels(), g, g}, seed,
                                       std::string("loss.") + kScaleNames[sc], -2.0, 2.0));
    }
    const std::vector<std::vector<GroundTruthBox>> gts{
        {{0, 0.3, 0.4, 0.25, 0.3}, {1, 0.7, 0.6, 0.1, 0.12}}, {{1, 0.5, 0.5, 0.6, 0.7}}};
    const Targets targets = build_targets(gts, spec, 0.5);
    TrainConfig cfg;
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      std::array<Var, kNumScales> vars;
      for (std::size_t sc = 0; sc < kNumScales; ++sc) vars[sc] = t.parameter(*heads[sc]);
      return maybe_fault(yolo_loss(vars, targets, spec, cfg).total, fault);
    }), o);
  }});

  cases.push_back({"domain_loss", "domain_loss", [seed](const GradCheckOptions& o, bool fault) {
    ParameterStore s;
    std::array<Parameter*, kNumScales> logits{};
    for (std::size_t sc = 0; sc < kNumScales; ++sc)
      logits[sc] = &s.add(std::string("logits.") + kScaleNames[sc],
                          random_tensor({3, 3}, seed, std::string("dl.") + kScaleNames[sc],
                                        -2.0, 2.0));
    const std::vector<std::size_t> ids{0, 2, 1};
    return grad_check(s.parameters(), GraphFn([&, fault](Tape& t) {
      std::array<Var, kNumScales> vars;
      for (std::size_t sc = 0; sc < kNumScales; ++sc) vars[sc] = t.parameter(*logits[sc]);
      return maybe_fault(domain_loss(vars, ids, 0.3).term, fault);
    }), o);
  }});
  return cases;
}

GradCheckReport full_chain(std::uint64_t seed, const GradCheckOptions& o, bool fault) {
  NetworkSpec spec;
  spec.input_width = 64;
  spec.stage_widths = {4, 8, 16, 32, 64};
  spec.use_residual = spec.use_channel_attention = true;
  Network net(spec, seed);
  jitter_affine(net.store(), seed);
  Rng rng(derive_seed(seed, "chain.images"));
  const Tensor images = Tensor::uniform({1, 3, 64, 64}, rng, 0.0, 1.0);
  const std::vector<std::vector<GroundTruthBox>> gts{
      {{1, 0.3, 0.35, 0.3, 0.25}, {4, 0.7, 0.7, 0.2, 0.3}, {0, 0.5, 0.45, 0.4, 0.5}}};
  TrainConfig cfg;
  const Targets targets = build_targets(gts, spec, cfg.ignore_iou);

  // Backbone activations of the unperturbed pass; a perturbation re-runs
  // only the levels at or after the perturbed parameter.
  BackboneCache cache;
  auto graph = [&](Tape& t, const Parameter* perturbed) {
    ForwardOptions fo;
    fo.mode = ops::Mode::kTrain;
    if (perturbed) {
      fo.reuse_backbone = &cache;
      fo.reuse_levels = net.backbone_level(perturbed->name);
    } else {
      fo.record_backbone = &cache;
    }
    MultiScaleOutput out = net.forward(t, images, fo);
    return maybe_fault(yolo_loss(out.heads, targets, spec, cfg).total, fault);
  };
  return grad_check(net.store().parameters(), PerturbedGraphFn(graph), o);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& opts) {
  if (opts.inject_fault) {
    const auto& cats = gradcheck_categories();
    if (std::find(cats.begin(), cats.end(), *opts.inject_fault) == cats.end())
      throw ValidationError("unknown gradcheck category for --inject-fault: " +
                            *opts.inject_fault);
  }
  std::vector<GradCheckCase> results;
  auto timed = [&](const std::string& category, const std::string& op, auto&& fn) {
    const bool fault = opts.inject_fault && *opts.inject_fault == category;
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckCase c{category, fault ? "faulty_identity" : op, fn(fault), 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results.push_back(std::move(c));
  };
  GradCheckOptions block;
  block.epsilon = opts.epsilon;
  block.tolerance = opts.block_tolerance;
  block.seed = opts.seed;
  for (const Case& c : block_cases(opts.seed))
    timed(c.category, c.op, [&](bool fault) { return c.run(block, fault); });
  if (opts.include_chain) {
    GradCheckOptions chain = block;
    chain.tolerance = opts.chain_tolerance;
    chain.sample_fraction = opts.chain_sample_fraction;
    timed("full_chain", "forward_multiscale",
          [&](bool fault) { return full_chain(opts.seed, chain, fault); });
  }
  return results;
}

}  // namespace adod
