#include "adod/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "adod/error.hpp"
#include "adod/ops.hpp"
#include "adod/postprocess.hpp"
#include "adod/rng.hpp"

namespace fs = std::filesystem;

namespace adod {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  for (auto [name, v] : {std::pair{"lambda_coord", lambda_coord},
                         std::pair{"lambda_obj", lambda_obj},
                         std::pair{"lambda_noobj", lambda_noobj},
                         std::pair{"lambda_cls", lambda_cls},
                         std::pair{"lambda_domain", lambda_domain},
                         std::pair{"grl_lambda", grl_lambda}})
    if (!(v >= 0.0)) throw ValidationError(std::string(name) + " must be >= 0");
  if (!(ignore_iou > 0.0 && ignore_iou <= 1.0))
    throw ValidationError("ignore_iou must lie in (0,1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ValidationError("adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be > 0");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "learning_rate", "batch_size",    "epochs",     "lambda_coord",     "lambda_obj",
      "lambda_noobj",  "lambda_cls",    "lambda_domain", "grl_lambda",    "ignore_iou",
      "seed",          "checkpoint_every", "adam_beta1", "adam_beta2",    "adam_eps"};
  return k;
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("learning_rate", format_double(learning_rate));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lambda_coord", format_double(lambda_coord));
  kv.set("lambda_obj", format_double(lambda_obj));
  kv.set("lambda_noobj", format_double(lambda_noobj));
  kv.set("lambda_cls", format_double(lambda_cls));
  kv.set("lambda_domain", format_double(lambda_domain));
  kv.set("grl_lambda", format_double(grl_lambda));
  kv.set("ignore_iou", format_double(ignore_iou));
  kv.set("seed", std::to_string(seed));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("adam_beta1", format_double(adam_beta1));
  kv.set("adam_beta2", format_double(adam_beta2));
  kv.set("adam_eps", format_double(adam_eps));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto count = [&](const std::string& key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ValidationError("config key " + key + " must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.batch_size = count("batch_size", c.batch_size);
  c.epochs = count("epochs", c.epochs);
  c.lambda_coord = kv.get_double("lambda_coord", c.lambda_coord);
  c.lambda_obj = kv.get_double("lambda_obj", c.lambda_obj);
  c.lambda_noobj = kv.get_double("lambda_noobj", c.lambda_noobj);
  c.lambda_cls = kv.get_double("lambda_cls", c.lambda_cls);
  c.lambda_domain = kv.get_double("lambda_domain", c.lambda_domain);
  c.grl_lambda = kv.get_double("grl_lambda", c.grl_lambda);
  c.ignore_iou = kv.get_double("ignore_iou", c.ignore_iou);
  c.seed = kv.get_u64("seed", c.seed);
  c.checkpoint_every = count("checkpoint_every", c.checkpoint_every);
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.validate();
  return c;
}

double LossBreakdown::weighted_total(const LossBreakdown& l, const TrainConfig& cfg) {
  return cfg.lambda_coord * l.coord + cfg.lambda_obj * l.obj + cfg.lambda_noobj * l.noobj +
         cfg.lambda_cls * l.cls + cfg.lambda_domain * l.domain;
}

namespace {

constexpr double kMinOffset = 1e-12;

double logit(double p) {
  p = std::clamp(p, kMinOffset, 1.0 - kMinOffset);
  return std::log(p / (1.0 - p));
}

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

}  // namespace

Targets build_targets(const std::vector<std::vector<GroundTruthBox>>& gts,
                      const NetworkSpec& spec, double ignore_iou) {
  Targets t;
  t.batch = gts.size();
  const double W = static_cast<double>(spec.input_width);
  const auto anchors = spec.resolved_anchors();
  for (std::size_t s = 0; s < kNumScales; ++s) {
    ScaleTargets& st = t.scales[s];
    st.grid = spec.grid_size(s);
    const std::size_t slots = t.batch * kAnchorsPerScale * st.grid * st.grid;
    st.assigned.assign(slots, 0);
    st.ignored.assign(slots, 0);
    for (auto* v : {&st.tx, &st.ty, &st.tw, &st.th, &st.offset_x, &st.offset_y}) v->assign(slots, 0.0);
    st.class_id.assign(slots, 0);
  }
  for (std::size_t n = 0; n < gts.size(); ++n) {
    for (const GroundTruthBox& g : gts[n]) {
      double w = g.w, h = g.h;
      if (w < 1e-6 || h < 1e-6) {
        ++t.clamp_warnings;
        w = std::max(w, 1e-6);
        h = std::max(h, 1e-6);
      }
      std::size_t best = 0;
      double best_iou = -1.0;
      for (std::size_t i = 0; i < anchors.size(); ++i) {
        const double v = shape_iou(w * W, h * W, anchors[i].w, anchors[i].h);
        if (v > best_iou) {
          best_iou = v;
          best = i;
        }
      }
      // anchors[0..2] belong to the finest scale (index 2).
      const std::size_t scale = kNumScales - 1 - best / kAnchorsPerScale;
      const std::size_t a = best % kAnchorsPerScale;
      ScaleTargets& st = t.scales[scale];
      const double S = static_cast<double>(st.grid);
      const std::size_t cx = std::min(st.grid - 1, static_cast<std::size_t>(g.cx * S));
      const std::size_t cy = std::min(st.grid - 1, static_cast<std::size_t>(g.cy * S));
      const std::size_t i = st.slot(n, a, cy, cx);
      st.assigned[i] = 1;
      st.offset_x[i] = g.cx * S - static_cast<double>(cx);
      st.offset_y[i] = g.cy * S - static_cast<double>(cy);
      st.tx[i] = logit(st.offset_x[i]);
      st.ty[i] = logit(st.offset_y[i]);
      st.tw[i] = std::log(w * W / anchors[best].w);
      st.th[i] = std::log(h * W / anchors[best].h);
      st.class_id[i] = g.class_id;
    }
  }
  // Static ignore region: anchor priors centered on their cell.
  for (std::size_t s = 0; s < kNumScales; ++s) {
    ScaleTargets& st = t.scales[s];
    const auto sa = spec.scale_anchors(s);
    const double S = static_cast<double>(st.grid);
    for (std::size_t n = 0; n < gts.size(); ++n) {
      if (gts[n].empty()) continue;
      for (std::size_t a = 0; a < kAnchorsPerScale; ++a)
        for (std::size_t cy = 0; cy < st.grid; ++cy)
          for (std::size_t cx = 0; cx < st.grid; ++cx) {
            const std::size_t i = st.slot(n, a, cy, cx);
            if (st.assigned[i]) continue;
            const double pcx = (cx + 0.5) / S, pcy = (cy + 0.5) / S;
            const double pw = sa[a].w / W, ph = sa[a].h / W;
            const BBox prior{pcx - pw / 2, pcy - ph / 2, pcx + pw / 2, pcy + ph / 2};
            for (const GroundTruthBox& g : gts[n])
              if (iou(prior, g.to_bbox()) > ignore_iou) {
                st.ignored[i] = 1;
                break;
              }
          }
    }
  }
  return t;
}

YoloLoss yolo_loss(const std::array<Var, kNumScales>& heads, const Targets& targets,
                   const NetworkSpec& spec, const TrainConfig& cfg) {
  const std::size_t K = spec.num_classes;
  const std::size_t per_anchor = 5 + K;
  std::size_t n_assigned = 0, n_noobj = 0;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Tensor& h = heads[s].value();
    const ScaleTargets& st = targets.scales[s];
    if (h.rank() != 4 || h.dim(0) != targets.batch || h.dim(1) != spec.head_channels() ||
        h.dim(2) != st.grid || h.dim(3) != st.grid)
      throw ValidationError("yolo_loss: head " + shape_str(h.shape()) +
                            " inconsistent with targets");
    for (std::size_t i = 0; i < st.assigned.size(); ++i) {
      if (st.assigned[i]) ++n_assigned;
      else if (!st.ignored[i]) ++n_noobj;
    }
  }
  const double inv_pos = n_assigned ? 1.0 / static_cast<double>(n_assigned) : 0.0;
  const double inv_neg = n_noobj ? 1.0 / static_cast<double>(n_noobj) : 0.0;

  LossBreakdown parts;
  using ops::sigmoid_scalar;
  using ops::softplus_scalar;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Tensor& h = heads[s].value();
    const ScaleTargets& st = targets.scales[s];
    const std::size_t G = st.grid;
    for (std::size_t n = 0; n < targets.batch; ++n)
      for (std::size_t a = 0; a < kAnchorsPerScale; ++a)
        for (std::size_t cy = 0; cy < G; ++cy)
          for (std::size_t cx = 0; cx < G; ++cx) {
            const std::size_t i = st.slot(n, a, cy, cx);
            const std::size_t ch = a * per_anchor;
            const double po = h.at(n, ch + 4, cy, cx);
            if (st.assigned[i]) {
              const double dx = sigmoid_scalar(h.at(n, ch + 0, cy, cx)) - st.offset_x[i];
              const double dy = sigmoid_scalar(h.at(n, ch + 1, cy, cx)) - st.offset_y[i];
              const double dw = h.at(n, ch + 2, cy, cx) - st.tw[i];
              const double dh = h.at(n, ch + 3, cy, cx) - st.th[i];
              parts.coord += dx * dx + dy * dy + dw * dw + dh * dh;
              parts.obj += softplus_scalar(-po);
              for (std::size_t k = 0; k < K; ++k) {
                const double pk = h.at(n, ch + 5 + k, cy, cx);
                parts.cls += softplus_scalar(pk) - (st.class_id[i] == k ? pk : 0.0);
              }
            } else if (!st.ignored[i]) {
              parts.noobj += softplus_scalar(po);
            }
          }
  }
  parts.coord *= inv_pos;
  parts.obj *= inv_pos;
  parts.cls *= inv_pos;
  parts.noobj *= inv_neg;
  parts.total = cfg.lambda_coord * parts.coord + cfg.lambda_obj * parts.obj +
                cfg.lambda_noobj * parts.noobj + cfg.lambda_cls * parts.cls;

  Tape& tape = heads[0].tape();
  const std::vector<Var> inputs(heads.begin(), heads.end());
  Var total = tape.record(
      Tensor::scalar(parts.total), inputs,
      [heads, K, per_anchor, inv_pos, inv_neg,
       lc = cfg.lambda_coord, lo = cfg.lambda_obj, ln = cfg.lambda_noobj,
       lk = cfg.lambda_cls, batch = targets.batch,
       scales = targets.scales](Tape& t, const Tensor& g) {
        const double go = g[0];
        for (std::size_t s = 0; s < kNumScales; ++s) {
          Tensor* d = t.grad_sink(heads[s]);
          if (!d) continue;
          const Tensor& h = heads[s].value();
          const ScaleTargets& st = scales[s];
          const std::size_t G = st.grid;
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t a = 0; a < kAnchorsPerScale; ++a)
              for (std::size_t cy = 0; cy < G; ++cy)
                for (std::size_t cx = 0; cx < G; ++cx) {
                  const std::size_t i = st.slot(n, a, cy, cx);
                  const std::size_t ch = a * per_anchor;
                  const double po = h.at(n, ch + 4, cy, cx);
                  if (st.assigned[i]) {
                    const double c = go * lc * inv_pos;
                    const double sx = sigmoid_scalar(h.at(n, ch + 0, cy, cx));
                    const double sy = sigmoid_scalar(h.at(n, ch + 1, cy, cx));
                    d->at(n, ch + 0, cy, cx) += c * 2.0 * (sx - st.offset_x[i]) * sx * (1.0 - sx);
                    d->at(n, ch + 1, cy, cx) += c * 2.0 * (sy - st.offset_y[i]) * sy * (1.0 - sy);
                    d->at(n, ch + 2, cy, cx) += c * 2.0 * (h.at(n, ch + 2, cy, cx) - st.tw[i]);
                    d->at(n, ch + 3, cy, cx) += c * 2.0 * (h.at(n, ch + 3, cy, cx) - st.th[i]);
                    d->at(n, ch + 4, cy, cx) += go * lo * inv_pos * (sigmoid_scalar(po) - 1.0);
                    for (std::size_t k = 0; k < K; ++k) {
                      const double pk = h.at(n, ch + 5 + k, cy, cx);
                      const double y = st.class_id[i] == k ? 1.0 : 0.0;
                      d->at(n, ch + 5 + k, cy, cx) += go * lk * inv_pos * (sigmoid_scalar(pk) - y);
                    }
                  } else if (!st.ignored[i]) {
                    d->at(n, ch + 4, cy, cx) += go * ln * inv_neg * sigmoid_scalar(po);
                  }
                }
        }
      });
  return {parts, total};
}

DomainLoss domain_loss(const std::array<Var, kNumScales>& logits,
                       const std::vector<std::size_t>& domain_ids, double lambda_domain) {
  if (!(lambda_domain >= 0.0)) throw ValidationError("lambda_domain must be >= 0");
  const Tensor& first = logits[0].value();
  if (first.rank() != 2 || first.dim(0) != domain_ids.size())
    throw ValidationError("domain_loss: logits " + shape_str(first.shape()) +
                          " do not match " + std::to_string(domain_ids.size()) + " domain ids");
  const std::size_t N = first.dim(0), D = first.dim(1);
  for (std::size_t id : domain_ids)
    if (id >= D)
      throw ValidationError("domain id " + std::to_string(id) + " out of range for " +
                            std::to_string(D) + " domains");
  // Softmax probabilities per head, kept for backward.
  std::array<Tensor, kNumScales> probs;
  double ce = 0.0;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Tensor& z = logits[s].value();
    if (z.shape() != first.shape())
      throw ValidationError("domain_loss: heads disagree on logit shape");
    probs[s] = Tensor(z.shape());
    for (std::size_t n = 0; n < N; ++n) {
      double m = z[n * D];
      for (std::size_t d = 1; d < D; ++d) m = std::max(m, z[n * D + d]);
      double se = 0.0;
      for (std::size_t d = 0; d < D; ++d) se += std::exp(z[n * D + d] - m);
      const double lse = m + std::log(se);
      ce += lse - z[n * D + domain_ids[n]];
      for (std::size_t d = 0; d < D; ++d) probs[s][n * D + d] = std::exp(z[n * D + d] - lse);
    }
  }
  const double scale = 1.0 / static_cast<double>(kNumScales * N);
  ce *= scale;
  Tape& tape = logits[0].tape();
  const std::vector<Var> inputs(logits.begin(), logits.end());
  Var term = tape.record(
      Tensor::scalar(lambda_domain * ce), inputs,
      [logits, probs = std::move(probs), domain_ids, N, D, c = lambda_domain * scale](
          Tape& t, const Tensor& g) {
        for (std::size_t s = 0; s < kNumScales; ++s) {
          Tensor* dz = t.grad_sink(logits[s]);
          if (!dz) continue;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t d = 0; d < D; ++d)
              (*dz)[n * D + d] +=
                  g[0] * c * (probs[s][n * D + d] - (domain_ids[n] == d ? 1.0 : 0.0));
        }
      });
  return {ce, term};
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamOptions& o) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (Parameter* p : params) {
    if (!p->requires_grad) continue;
    auto [it, fresh] = state.moments.try_emplace(p->name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Tensor::zeros(p->value.shape());
      v = Tensor::zeros(p->value.shape());
    } else if (m.shape() != p->value.shape()) {
      throw ValidationError("adam state for " + p->name + " has shape " + shape_str(m.shape()) +
                            ", parameter has " + shape_str(p->value.shape()));
    }
    if (p->grad && p->grad->shape() != p->value.shape())
      throw ValidationError("gradient shape mismatch for " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad ? (*p->grad)[i] : 0.0;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->value[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ValidationError("cannot stack an empty batch");
  const Shape& s = images[0]->shape();
  if (s.size() != 3) throw ValidationError("stack_images expects [C,H,W] images");
  Tensor out({images.size(), s[0], s[1], s[2]});
  const std::size_t per = images[0]->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) throw ValidationError("stack_images: mixed image shapes");
    std::copy_n(images[i]->ptr(), per, out.ptr() + i * per);
  }
  return out;
}

BatchLoss compute_batch_loss(Tape& tape, const Network& net, const Tensor& images,
                             const std::vector<std::vector<GroundTruthBox>>& gts,
                             const std::vector<std::size_t>& domain_ids,
                             const TrainConfig& cfg, DomainCoupling coupling) {
  ForwardOptions fo;
  fo.mode = ops::Mode::kTrain;
  fo.grl_lambda = cfg.grl_lambda;
  fo.coupling = coupling;
  MultiScaleOutput out = net.forward(tape, images, fo);
  const Targets targets = build_targets(gts, net.spec(), cfg.ignore_iou);
  YoloLoss det = yolo_loss(out.heads, targets, net.spec(), cfg);
  BatchLoss bl{det.parts, det.total};
  if (out.domain_logits) {
    DomainLoss dl = domain_loss(*out.domain_logits, domain_ids, cfg.lambda_domain);
    bl.parts.domain = dl.cross_entropy;
    bl.parts.total = det.parts.total + cfg.lambda_domain * dl.cross_entropy;
    bl.total = ops::add(det.total, dl.term);
  }
  return bl;
}

std::string metrics_csv_header() { return "epoch,coord,obj,noobj,cls,domain,total,seconds"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f", m.epoch,
                m.loss.coord, m.loss.obj, m.loss.noobj, m.loss.cls, m.loss.domain, m.loss.total,
                m.seconds);
  return buf;
}

TrainResult train(Network& net, const std::vector<LoadedSample>& data, const TrainConfig& cfg,
                  const TrainOptions& opts) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    if (ec) throw IoError("cannot create " + opts.out_dir + ": " + ec.message());
    metrics.open((fs::path(opts.out_dir) / "metrics.csv").string(), std::ios::binary);
    if (!metrics) throw IoError("cannot write metrics log in " + opts.out_dir);
    metrics << metrics_csv_header() << '\n';
  }
  auto checkpoint = [&](const std::string& name) {
    if (!opts.out_dir.empty()) save_checkpoint(net, (fs::path(opts.out_dir) / name).string());
  };

  TrainResult result;
  AdamState adam;
  const AdamOptions ao{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  auto params = net.store().parameters();
  std::vector<std::size_t> order(data.size());
  std::size_t batch_index = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "shuffle." + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Tensor*> imgs;
      std::vector<std::vector<GroundTruthBox>> gts;
      std::vector<std::size_t> domains;
      for (std::size_t i = start; i < end; ++i) {
        const LoadedSample& s = data[order[i]];
        imgs.push_back(&s.image);
        gts.push_back(s.boxes);
        domains.push_back(s.domain_id);
      }
      const std::string where = "batch index " + std::to_string(batch_index) + " (epoch " +
                                std::to_string(epoch) + ")";
      net.store().zero_grad();
      Tape tape;
      BatchLoss bl;
      try {
        bl = compute_batch_loss(tape, net, stack_images(imgs), gts, domains, cfg);
        if (!std::isfinite(bl.parts.total)) throw NumericError("nonfinite loss");
        tape.backward(bl.total);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      adam_step(params, adam, ao);
      sum.coord += bl.parts.coord;
      sum.obj += bl.parts.obj;
      sum.noobj += bl.parts.noobj;
      sum.cls += bl.parts.cls;
      sum.domain += bl.parts.domain;
      sum.total += bl.parts.total;
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(batches);
    m.loss = {sum.coord * inv, sum.obj * inv, sum.noobj * inv,
              sum.cls * inv,   sum.domain * inv, sum.total * inv};
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics) metrics << metrics_csv_row(m) << '\n' << std::flush;
    if (opts.on_epoch) opts.on_epoch(m);
    result.history.push_back(m);
    if (cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch%04zu.ckpt", epoch);
      checkpoint(name);
    }
  }
  checkpoint("final.ckpt");
  return result;
}

std::array<double, kNumScales> domain_accuracy(const Network& net,
                                               const std::vector<LoadedSample>& data,
                                               std::size_t batch_size) {
  if (!net.spec().use_domain) throw ValidationError("network has no domain heads");
  std::array<std::size_t, kNumScales> correct{};
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Tensor*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&data[i].image);
    Tape tape;
    ForwardOptions fo;
    fo.mode = ops::Mode::kEval;
    const MultiScaleOutput out = net.forward(tape, stack_images(imgs), fo);
    for (std::size_t s = 0; s < kNumScales; ++s) {
      const Tensor& z = (*out.domain_logits)[s].value();
      const std::size_t D = z.dim(1);
      for (std::size_t n = 0; n < end - start; ++n) {
        std::size_t arg = 0;
        for (std::size_t d = 1; d < D; ++d)
          if (z[n * D + d] > z[n * D + arg]) arg = d;
        if (arg == data[start + n].domain_id) ++correct[s];
      }
    }
  }
  std::array<double, kNumScales> acc{};
  for (std::size_t s = 0; s < kNumScales; ++s)
    acc[s] = static_cast<double>(correct[s]) / static_cast<double>(data.size());
  return acc;
}

}  // namespace adod
