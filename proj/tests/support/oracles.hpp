#pragma once

// Straight-line reference implementations. Nothing here calls into the ops
// or postprocess code under test; blocks are only read for their parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "adod/blocks.hpp"
#include "adod/evaluation.hpp"
#include "adod/network.hpp"
#include "adod/postprocess.hpp"
#include "adod/tensor.hpp"

namespace oracle {

using adod::Tensor;

inline double at4(const Tensor& t, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const auto& s = t.shape();
  return t[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor* bias, std::size_t stride,
                     std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor out({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                acc += at4(x, n, c, iy, ix) * at4(k, o, c, ky, kx);
              }
          out.at(n, o, oy, ox) = acc;
        }
  return out;
}

// Batch statistics (biased variance) when `train`, else the given running stats.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const Tensor& running_mean, const Tensor& running_var, bool train,
                        double eps) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = running_mean[c], var = running_var[c];
    if (train) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) s += x.at(n, c, h, w);
      mean = s / static_cast<double>(N * H * W);
      double q = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) q += (x.at(n, c, h, w) - mean) * (x.at(n, c, h, w) - mean);
      var = q / static_cast<double>(N * H * W);
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          out.at(n, c, h, w) = gamma[c] * (x.at(n, c, h, w) - mean) * inv + beta[c];
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Tensor map(Tensor t, double (*f)(double)) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = f(t[i]);
  return t;
}

inline double relu(double v) { return v > 0 ? v : 0.0; }

inline Tensor global_avg_pool(const Tensor& x) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, C, 1, 1});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) s += x.at(n, c, h, w);
      out.at(n, c, 0, 0) = s / static_cast<double>(H * W);
    }
  return out;
}

inline const Tensor* bias_of(const adod::Conv2d& c) { return c.bias ? &c.bias->value : nullptr; }

inline Tensor conv(const adod::Conv2d& c, const Tensor& x) {
  return conv2d(x, c.weight->value, bias_of(c), c.options.stride, c.options.padding);
}

inline Tensor channel_attention(const adod::ChannelAttentionBlock& b, const Tensor& x) {
  const Tensor s = map(conv(b.conv_up(), map(conv(b.conv_down(), global_avg_pool(x)), relu)), sigmoid);
  Tensor out(x.shape());
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t h = 0; h < x.dim(2); ++h)
        for (std::size_t w = 0; w < x.dim(3); ++w)
          out.at(n, c, h, w) = x.at(n, c, h, w) * s.at(n, c, 0, 0);
  return out;
}

inline Tensor bn(const adod::BatchNorm2d& b, const Tensor& x, bool train) {
  return batchnorm(x, b.gamma->value, b.beta->value, *b.running_mean, *b.running_var, train,
                   b.eps);
}

inline Tensor residual(const adod::ResidualBlock& b, const Tensor& x, bool train) {
  const Tensor t1 = map(bn(b.bn1(), conv(b.conv1(), x), train), relu);
  const Tensor br = conv(b.conv2(), bn(b.bn2(), conv(b.conv3(), t1), train));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + br[i];
  return out;
}

inline Tensor domain_head(const adod::DomainClassifierHead& h, const Tensor& x) {
  const Tensor t = map(conv(h.trunk5(), map(conv(h.trunk7(), x), relu)), relu);
  const Tensor a = map(conv(h.attn5(), map(conv(h.attn7(), t), relu)), relu);
  const Tensor p = global_avg_pool(t), q = global_avg_pool(a);
  const std::size_t N = x.dim(0), Cp = t.dim(1);
  const Tensor& Wt = h.feedforward().weight->value;
  const Tensor& bt = h.feedforward().bias->value;
  const std::size_t D = Wt.dim(0);
  Tensor out({N, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = bt[d];
      for (std::size_t c = 0; c < Cp; ++c)
        acc += Wt[d * Cp + c] * p.at(n, c, 0, 0) * q.at(n, c, 0, 0);
      out[n * D + d] = acc;
    }
  return out;
}

inline double iou(const adod::BBox& a, const adod::BBox& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) +
                     (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Sort by (score desc, class asc, bbox lexicographic), then every kept box
// suppresses all later same-class boxes at IoU >= tau.
inline std::vector<adod::Detection> nms(std::vector<adod::Detection> d, double tau) {
  auto before = [](const adod::Detection& a, const adod::Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    const double ka[4] = {a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max};
    const double kb[4] = {b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max};
    return std::lexicographical_compare(ka, ka + 4, kb, kb + 4);
  };
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j + 1 < d.size() - i; ++j)
      if (before(d[j + 1], d[j])) std::swap(d[j], d[j + 1]);
  std::vector<bool> dead(d.size(), false);
  std::vector<adod::Detection> kept;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(d[i]);
    for (std::size_t j = i + 1; j < d.size(); ++j)
      if (d[j].class_id == d[i].class_id && oracle::iou(d[i].bbox, d[j].bbox) >= tau) dead[j] = true;
  }
  return kept;
}

// Explicit PR curve over every prefix of the ranking.
inline double average_precision(const std::vector<bool>& ranked_tp, std::size_t num_gt,
                                bool eleven_point) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = ranked_tp.size();
  std::vector<double> p(n), r(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t tp = 0;
    for (std::size_t j = 0; j <= k; ++j) tp += ranked_tp[j];
    p[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    r[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  if (eleven_point) {
    double s = 0;
    for (int t = 0; t <= 10; ++t) {
      double best = 0;
      for (std::size_t k = 0; k < n; ++k)
        if (r[k] * 10.0 >= t - 1e-9) best = std::max(best, p[k]);
      s += best;
    }
    return s / 11.0;
  }
  double ap = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!ranked_tp[k]) continue;
    double best = 0;
    for (std::size_t j = k; j < n; ++j) best = std::max(best, p[j]);
    ap += best / static_cast<double>(num_gt);
  }
  return ap;
}

// Trainable scalar count from the spec alone.
inline std::size_t parameter_count(const adod::NetworkSpec& s) {
  auto half = [](std::size_t c) { return std::max<std::size_t>(1, c / 2); };
  auto quarter = [](std::size_t c) { return std::max<std::size_t>(1, c / 4); };
  auto cba = [](std::size_t i, std::size_t o, std::size_t k) { return i * o * k * k + 2 * o; };
  auto cv = [](std::size_t i, std::size_t o, std::size_t k) { return i * o * k * k + o; };
  const auto& w = s.stage_widths;
  std::size_t total = cba(3, half(w[0]), 3);
  std::size_t in = half(w[0]);
  for (std::size_t i = 0; i < 5; ++i) {
    total += cba(in, w[i], 3);
    total += s.blocks_per_stage[i] * (cba(w[i], half(w[i]), 1) + cba(half(w[i]), w[i], 3));
    in = w[i];
  }
  const std::size_t A = 3 * (5 + s.num_classes);
  for (std::size_t sc = 0; sc < 3; ++sc) {
    const std::size_t c = w[4 - sc];
    std::size_t set_in = c;
    if (sc > 0) {
      total += cba(half(w[5 - sc]), quarter(w[5 - sc]), 1);
      set_in = c + quarter(w[5 - sc]);
    }
    total += cba(set_in, half(c), 1) + cba(half(c), c, 3) + cba(c, half(c), 1) +
             cba(half(c), c, 3) + cba(c, half(c), 1);
    total += cba(half(c), c, 3);
    if (s.use_residual) {
      const std::size_t m = s.residual_mid_channels ? s.residual_mid_channels : half(c);
      total += c * m + 2 * m + m * m * 9 + 2 * m + m * c;
    }
    if (s.use_channel_attention) {
      const std::size_t h = std::max<std::size_t>(1, c / s.attention_reduction);
      total += 2 * c * h;
    }
    total += cv(c, A, 1);
    if (s.use_domain) {
      const std::size_t h = s.domain_hidden_channels ? s.domain_hidden_channels : half(c);
      total += cv(c, h, 7) + cv(h, h, 5) + cv(h, h, 7) + cv(h, h, 5) + h * s.num_domains +
               s.num_domains;
    }
  }
  return total;
}

}  // namespace oracle
