#include "adod/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "adod/error.hpp"
#include "adod/rng.hpp"

namespace adod {

namespace {

const double kObjectnessPriorLogit = -std::log(99.0);

constexpr std::array<Anchor, 9> kYoloAnchors416{{{10, 13},
                                                 {16, 30},
                                                 {33, 23},
                                                 {30, 61},
                                                 {62, 45},
                                                 {59, 119},
                                                 {116, 90},
                                                 {156, 198},
                                                 {373, 326}}};

std::size_t half(std::size_t c) { return std::max<std::size_t>(1, c / 2); }
std::size_t quarter(std::size_t c) { return std::max<std::size_t>(1, c / 4); }

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::vector<Anchor> default_anchors(std::size_t input_width) {
  const double scale = static_cast<double>(input_width) / 416.0;
  std::vector<Anchor> out;
  for (const auto& a : kYoloAnchors416) out.push_back({a.w * scale, a.h * scale});
  return out;
}

void NetworkSpec::validate() const {
  if (input_width == 0 || input_width % 32 != 0)
    throw ValidationError("input_width must be a positive multiple of 32, got " +
                          std::to_string(input_width));
  if (stage_widths.size() != 5)
    throw ValidationError("stage_widths must list exactly 5 stages");
  if (blocks_per_stage.size() != 5)
    throw ValidationError("blocks_per_stage must list exactly 5 stages");
  for (auto w : stage_widths)
    if (w == 0) throw ValidationError("stage_widths entries must be positive");
  if (num_classes == 0) throw ValidationError("num_classes must be >= 1");
  if (num_domains == 0) throw ValidationError("num_domains must be >= 1");
  if (attention_reduction == 0) throw ValidationError("attention_reduction must be >= 1");
  if (!anchors.empty()) {
    if (anchors.size() != kNumScales * kAnchorsPerScale)
      throw ValidationError("anchors must list exactly 9 (w,h) pairs");
    for (const auto& a : anchors)
      if (!(a.w > 0 && a.h > 0 && a.w <= static_cast<double>(input_width) &&
            a.h <= static_cast<double>(input_width)))
        throw ValidationError("anchor extents must be positive and <= input_width");
  }
}

std::vector<Anchor> NetworkSpec::resolved_anchors() const {
  return anchors.empty() ? default_anchors(input_width) : anchors;
}

std::array<Anchor, kAnchorsPerScale> NetworkSpec::scale_anchors(std::size_t scale) const {
  const auto all = resolved_anchors();
  const std::size_t base = (kNumScales - 1 - scale) * kAnchorsPerScale;
  return {all[base], all[base + 1], all[base + 2]};
}

const std::vector<std::string>& NetworkSpec::keys() {
  static const std::vector<std::string> k{
      "input_width",         "stage_widths",          "blocks_per_stage",
      "num_classes",         "anchors",               "use_residual",
      "use_channel_attention", "use_domain",          "num_domains",
      "attention_reduction", "residual_mid_channels", "domain_hidden_channels"};
  return k;
}

KeyValues NetworkSpec::to_key_values() const {
  KeyValues kv;
  kv.set("input_width", std::to_string(input_width));
  kv.set("stage_widths", join_sizes(stage_widths));
  kv.set("blocks_per_stage", join_sizes(blocks_per_stage));
  kv.set("num_classes", std::to_string(num_classes));
  std::string a;
  for (const auto& anc : resolved_anchors()) {
    if (!a.empty()) a += ",";
    a += format_double(anc.w) + "," + format_double(anc.h);
  }
  kv.set("anchors", a);
  kv.set("use_residual", use_residual ? "true" : "false");
  kv.set("use_channel_attention", use_channel_attention ? "true" : "false");
  kv.set("use_domain", use_domain ? "true" : "false");
  kv.set("num_domains", std::to_string(num_domains));
  kv.set("attention_reduction", std::to_string(attention_reduction));
  kv.set("residual_mid_channels", std::to_string(residual_mid_channels));
  kv.set("domain_hidden_channels", std::to_string(domain_hidden_channels));
  return kv;
}

NetworkSpec NetworkSpec::from_key_values(const KeyValues& kv) {
  NetworkSpec s;
  auto positive = [&](const std::string& key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ValidationError("config key " + key + " must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  s.input_width = positive("input_width", s.input_width);
  s.stage_widths = kv.get_sizes("stage_widths", s.stage_widths);
  s.blocks_per_stage = kv.get_sizes("blocks_per_stage", s.blocks_per_stage);
  s.num_classes = positive("num_classes", s.num_classes);
  if (kv.has("anchors")) {
    const auto flat = kv.get_doubles("anchors", {});
    if (flat.size() != 18)
      throw ValidationError("config key anchors must hold 18 numbers (9 w,h pairs)");
    for (std::size_t i = 0; i < 18; i += 2) s.anchors.push_back({flat[i], flat[i + 1]});
  }
  s.use_residual = kv.get_bool("use_residual", s.use_residual);
  s.use_channel_attention = kv.get_bool("use_channel_attention", s.use_channel_attention);
  s.use_domain = kv.get_bool("use_domain", s.use_domain);
  s.num_domains = positive("num_domains", s.num_domains);
  s.attention_reduction = positive("attention_reduction", s.attention_reduction);
  s.residual_mid_channels = positive("residual_mid_channels", s.residual_mid_channels);
  s.domain_hidden_channels = positive("domain_hidden_channels", s.domain_hidden_channels);
  s.validate();
  return s;
}

std::string NetworkSpec::canonical() const { return to_key_values().serialize(); }

std::uint64_t NetworkSpec::hash() const { return fnv1a64(canonical()); }

std::vector<Anchor> kmeans_anchors(const std::vector<Anchor>& boxes, std::size_t k,
                                   std::uint64_t seed, std::size_t iterations) {
  if (k == 0 || boxes.size() < k)
    throw ValidationError("kmeans_anchors: need at least k boxes");
  auto shape_iou = [](const Anchor& a, const Anchor& b) {
    const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
    return inter / (a.w * a.h + b.w * b.h - inter);
  };
  Rng rng(derive_seed(seed, "kmeans_anchors"));
  std::vector<Anchor> centers;
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
    centers.push_back(boxes[order[i]]);
  }
  std::vector<std::size_t> assign(boxes.size(), k);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      std::size_t best = 0;
      double best_d = 2.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = 1.0 - shape_iou(boxes[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c) {
      double sw = 0, sh = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (assign[i] == c) {
          sw += boxes[i].w;
          sh += boxes[i].h;
          ++n;
        }
      if (n) centers[c] = {sw / n, sh / n};
    }
  }
  std::sort(centers.begin(), centers.end(), [](const Anchor& a, const Anchor& b) {
    return a.w * a.h < b.w * b.h;
  });
  return centers;
}

ConvBnAct ConvBnAct::create(ParameterStore& store, const std::string& prefix,
                            std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride, std::uint64_t seed) {
  return {Conv2d::create(store, prefix + ".conv", in_channels, out_channels, kernel,
                         stride, kernel / 2, false, seed),
          BatchNorm2d::create(store, prefix + ".bn", out_channels)};
}

Var ConvBnAct::forward(Var x, ops::Mode mode) const {
  return ops::leaky_relu(bn.forward(conv.forward(x), mode), 0.1);
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& w = spec_.stage_widths;
  stem_ = ConvBnAct::create(store_, "backbone.stem", 3, half(w[0]), 3, 1, seed);
  std::size_t in = half(w[0]);
  for (std::size_t s = 0; s < 5; ++s) {
    const std::string p = "backbone.stage" + std::to_string(s);
    Stage st;
    st.down = ConvBnAct::create(store_, p + ".down", in, w[s], 3, 2, seed);
    for (std::size_t u = 0; u < spec_.blocks_per_stage[s]; ++u) {
      const std::string up = p + ".unit" + std::to_string(u);
      st.units.emplace_back(ConvBnAct::create(store_, up + ".reduce", w[s], half(w[s]), 1, 1, seed),
                            ConvBnAct::create(store_, up + ".expand", half(w[s]), w[s], 3, 1, seed));
    }
    stages_.push_back(std::move(st));
    in = w[s];
  }

  // Scale s consumes backbone stage 4 - s; finer scales also take the
  // previous head's route through a lateral 1x1 and 2x upsampling.
  std::size_t route_channels = 0;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const std::string p = std::string("head.") + kScaleNames[s];
    const std::size_t c = w[4 - s];
    auto head = std::make_unique<Head>();
    std::size_t set_in = c;
    if (s > 0) {
      head->lateral = ConvBnAct::create(store_, p + ".lateral", route_channels,
                                        quarter(w[5 - s]), 1, 1, seed);
      set_in = quarter(w[5 - s]) + c;
    }
    for (std::size_t i = 0; i < 5; ++i) {
      const bool wide = i % 2 == 1;
      head->set.push_back(ConvBnAct::create(store_, p + ".set" + std::to_string(i),
                                            i == 0 ? set_in : (wide ? half(c) : c),
                                            wide ? c : half(c), wide ? 3 : 1, 1, seed));
    }
    route_channels = half(c);
    head->pre = ConvBnAct::create(store_, p + ".pre", half(c), c, 3, 1, seed);
    if (spec_.use_residual)
      head->residual.emplace(store_, p + ".residual", c,
                             spec_.residual_mid_channels ? spec_.residual_mid_channels : half(c),
                             seed);
    if (spec_.use_channel_attention)
      head->attention.emplace(store_, p + ".attention", c, spec_.attention_reduction, false,
                              seed);
    head->detect = Conv2d::create(store_, p + ".detect", c, spec_.head_channels(), 1, 1, 0,
                                  true, seed);
    // Objectness starts at a 1% prior.
    for (std::size_t a = 0; a < kAnchorsPerScale; ++a)
      head->detect.bias->value[a * (5 + spec_.num_classes) + 4] = kObjectnessPriorLogit;
    if (spec_.use_domain)
      head->domain.emplace(store_, std::string("domain.") + kScaleNames[s], c,
                           spec_.domain_hidden_channels ? spec_.domain_hidden_channels : half(c),
                           spec_.num_domains, seed);
    heads_[s] = std::move(head);
  }
}

std::size_t Network::residual_block_count() const {
  return std::count_if(heads_.begin(), heads_.end(),
                       [](const auto& h) { return h->residual.has_value(); });
}

std::size_t Network::attention_block_count() const {
  return std::count_if(heads_.begin(), heads_.end(),
                       [](const auto& h) { return h->attention.has_value(); });
}

std::size_t Network::domain_head_count() const {
  return std::count_if(heads_.begin(), heads_.end(),
                       [](const auto& h) { return h->domain.has_value(); });
}

const ChannelAttentionBlock* Network::attention(std::size_t scale) const {
  const auto& h = heads_.at(scale);
  return h->attention ? &*h->attention : nullptr;
}

const ResidualBlock* Network::residual(std::size_t scale) const {
  const auto& h = heads_.at(scale);
  return h->residual ? &*h->residual : nullptr;
}

const DomainClassifierHead* Network::domain_head(std::size_t scale) const {
  const auto& h = heads_.at(scale);
  return h->domain ? &*h->domain : nullptr;
}

std::size_t Network::backbone_level(const std::string& name) const {
  if (name.rfind("backbone.stem.", 0) == 0) return 0;
  const std::string stage = "backbone.stage";
  if (name.rfind(stage, 0) == 0) {
    const std::size_t dot = name.find('.', stage.size());
    return 1 + std::stoul(name.substr(stage.size(), dot - stage.size()));
  }
  return backbone_levels();
}

MultiScaleOutput Network::forward(Tape& tape, const Tensor& images,
                                  const ForwardOptions& opts) const {
  const std::size_t W = spec_.input_width;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != W || images.dim(3) != W)
    throw ValidationError("network input must be [N,3," + std::to_string(W) + "," +
                          std::to_string(W) + "], got " + shape_str(images.shape()));
  const ops::Mode mode = opts.mode;
  if (opts.reuse_backbone && opts.reuse_backbone->outputs.size() < opts.reuse_levels)
    throw ValidationError("backbone cache holds fewer levels than requested");
  if (opts.record_backbone) opts.record_backbone->outputs.assign(backbone_levels(), Tensor());
  auto reused = [&](std::size_t level) {
    return opts.reuse_backbone && level < opts.reuse_levels;
  };
  auto keep = [&](std::size_t level, Var v) {
    if (opts.record_backbone) opts.record_backbone->outputs[level] = v.value();
    return v;
  };
  Var x = keep(0, reused(0) ? tape.constant(opts.reuse_backbone->outputs[0])
                            : stem_.forward(tape.constant(images), mode));
  std::array<Var, kNumScales> taps;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (reused(s + 1)) {
      x = tape.constant(opts.reuse_backbone->outputs[s + 1]);
    } else {
      x = stages_[s].down.forward(x, mode);
      for (const auto& [reduce, expand] : stages_[s].units)
        x = ops::add(x, expand.forward(reduce.forward(x, mode), mode));
    }
    keep(s + 1, x);
    if (s >= 2) taps[4 - s] = x;
  }

  MultiScaleOutput out;
  const bool domain = spec_.use_domain && opts.compute_domain;
  if (domain) out.domain_logits.emplace();
  Var route;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const Head& h = *heads_[s];
    Var y = taps[s];
    if (h.lateral)
      y = ops::concat_channels(ops::upsample_nearest2x(h.lateral->forward(route, mode)), y);
    for (const auto& layer : h.set) y = layer.forward(y, mode);
    route = y;
    Var f = h.pre.forward(y, mode);
    if (h.residual) f = h.residual->forward(f, mode);
    if (h.attention) f = h.attention->forward(f);
    out.features[s] = f;
    out.heads[s] = h.detect.forward(f);
    if (domain) {
      (*out.domain_logits)[s] = opts.coupling == DomainCoupling::kReversed
                                    ? h.domain->forward_adversarial(f, opts.grl_lambda)
                                    : h.domain->forward(f);
    }
  }
  return out;
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
  return Network(spec, seed);
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'O', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_raw(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_raw(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError("truncated checkpoint");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_raw<std::uint32_t>(out, kCheckpointVersion);
  put_raw<std::uint64_t>(out, net.spec().hash());
  const auto params = net.store().parameters();
  const auto buffers = net.store().buffers();
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  auto entry = [&](std::uint8_t kind, const std::string& name, const Tensor& t) {
    put_raw<std::uint8_t>(out, kind);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  };
  for (const Parameter* p : params) entry(0, p->name, p->value);
  for (const auto& [name, t] : buffers) entry(1, name, *t);
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Network load_checkpoint(const std::string& path, const NetworkSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  if (get_raw<std::uint32_t>(in) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + path);
  const auto hash = get_raw<std::uint64_t>(in);
  if (hash != spec.hash())
    throw ValidationError("checkpoint " + path +
                          " was saved with a different network spec (spec-hash mismatch)");
  Network net(spec, 0);
  const auto count = get_raw<std::uint32_t>(in);
  std::size_t params_seen = 0, buffers_seen = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = get_raw<std::uint8_t>(in);
    const auto len = get_raw<std::uint32_t>(in);
    if (len > 4096) throw IoError("corrupt checkpoint entry name in " + path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint");
    Tensor t = read_tensor(in);
    Tensor* dst = nullptr;
    if (kind == 0) {
      Parameter* p = net.store().find(name);
      if (p) dst = &p->value;
      ++params_seen;
    } else {
      dst = net.store().find_buffer(name);
      ++buffers_seen;
    }
    if (!dst) throw IoError("checkpoint entry " + name + " has no counterpart in the network");
    if (dst->shape() != t.shape())
      throw IoError("checkpoint entry " + name + " has shape " + shape_str(t.shape()) +
                    ", network expects " + shape_str(dst->shape()));
    *dst = std::move(t);
  }
  if (params_seen != net.store().parameters().size() ||
      buffers_seen != net.store().buffers().size())
    throw IoError("checkpoint " + path + " is missing entries");
  return net;
}

}  // namespace adod
