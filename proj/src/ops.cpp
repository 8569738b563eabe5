#include "adod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "adod/error.hpp"

namespace adod::ops {

double sigmoid_scalar(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* what) {
  if (t.rank() != rank)
    throw ValidationError(std::string(op) + ": " + what + " must have rank " +
                          std::to_string(rank) + ", got shape " +
                          shape_str(t.shape()));
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k,
                           const ConvOptions& o) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(k, 4, "conv2d", "kernel");
  if (x.dim(1) != k.dim(1))
    throw ValidationError("conv2d: input channels of " + shape_str(x.shape()) +
                          " do not match kernel " + shape_str(k.shape()));
  if (o.stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2),
                 k.dim(3), o.stride, o.padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw)
    throw ValidationError("conv2d: nonpositive output extent for input " +
                          shape_str(x.shape()) + " and kernel " +
                          shape_str(k.shape()) + " with padding " +
                          std::to_string(g.pad));
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// cols: [Cin*kH*kW, oH*oW] for batch item n.
void im2col(const ConvGeometry& g, const double* x, std::vector<double>& cols) {
  const std::size_t spatial = g.oh * g.ow;
  cols.assign(g.cin * g.kh * g.kw * spatial, 0.0);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols.data() + ((ci * g.kh + ky) * g.kw + kx) * spatial;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) -
                            static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            row[oy * g.ow + ox] = plane[iy * g.w + ix];
          }
        }
      }
  }
}

void col2im_add(const ConvGeometry& g, const std::vector<double>& cols,
                double* dx) {
  const std::size_t spatial = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = dx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row =
            cols.data() + ((ci * g.kh + ky) * g.kw + kx) * spatial;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) -
                            static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            plane[iy * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
  }
}

constexpr std::size_t kSmallSpatial = 32;

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

void conv_forward_im2col(const ConvGeometry& g, const Tensor& x,
                         const Tensor& k, const Tensor* b, Tensor& out) {
  const std::size_t spatial = g.oh * g.ow;
  const std::size_t patch = g.cin * g.kh * g.kw;
  const bool sparse = spatial < kSmallSpatial && !is_pointwise(g);
  // Small outputs: only the taps that land inside the image, per position.
  std::vector<std::vector<std::size_t>> taps(sparse ? spatial : 0);
  std::vector<std::vector<std::size_t>> offsets(sparse ? spatial : 0);
  for (std::size_t oy = 0; sparse && oy < g.oh; ++oy)
    for (std::size_t ox = 0; ox < g.ow; ++ox)
      for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            taps[oy * g.ow + ox].push_back((ci * g.kh + ky) * g.kw + kx);
            offsets[oy * g.ow + ox].push_back((ci * g.h + iy) * g.w + ix);
          }
        }
  std::vector<double> cols, vals;
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* src = x.ptr() + n * g.cin * g.h * g.w;
    double* o = out.ptr() + n * g.cout * spatial;
    if (sparse) {
      for (std::size_t j = 0; j < spatial; ++j) {
        const auto& tj = taps[j];
        const auto& oj = offsets[j];
        vals.resize(oj.size());
        for (std::size_t t = 0; t < oj.size(); ++t) vals[t] = src[oj[t]];
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* wrow = k.ptr() + co * patch;
          double acc = b ? (*b)[co] : 0.0;
          for (std::size_t t = 0; t < tj.size(); ++t) acc += wrow[tj[t]] * vals[t];
          o[co * spatial + j] = acc;
        }
      }
      continue;
    }
    const double* c;
    if (is_pointwise(g)) {
      c = src;
    } else {
      im2col(g, src, cols);
      c = cols.data();
    }
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* orow = o + co * spatial;
      std::fill(orow, orow + spatial, b ? (*b)[co] : 0.0);
      const double* wrow = k.ptr() + co * patch;
      for (std::size_t r = 0; r < patch; ++r) {
        const double wv = wrow[r];
        if (wv == 0.0) continue;
        const double* crow = c + r * spatial;
        for (std::size_t j = 0; j < spatial; ++j) orow[j] += wv * crow[j];
      }
    }
  }
}

void conv_forward_direct(const ConvGeometry& g, const Tensor& x,
                         const Tensor& k, const Tensor* b, Tensor& out) {
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = b ? (*b)[co] : 0.0;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long iy = static_cast<long>(oy * g.stride + ky) -
                              static_cast<long>(g.pad);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long ix = static_cast<long>(ox * g.stride + kx) -
                                static_cast<long>(g.pad);
                if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                acc += k.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
              }
            }
          out.at(n, co, oy, ox) = acc;
        }
}

void conv_backward_im2col(const ConvGeometry& g, const Tensor& x,
                          const Tensor& k, const Tensor& gout, Tensor* dx,
                          Tensor* dk, Tensor* db) {
  const std::size_t spatial = g.oh * g.ow;
  const std::size_t patch = g.cin * g.kh * g.kw;
  std::vector<double> cols, dcols;
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* go = gout.ptr() + n * g.cout * spatial;
    if (db)
      for (std::size_t co = 0; co < g.cout; ++co) {
        double s = 0.0;
        for (std::size_t j = 0; j < spatial; ++j) s += go[co * spatial + j];
        (*db)[co] += s;
      }
    const double* src = x.ptr() + n * g.cin * g.h * g.w;
    if (dk) {
      const double* c;
      if (is_pointwise(g)) {
        c = src;
      } else {
        im2col(g, src, cols);
        c = cols.data();
      }
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* grow = go + co * spatial;
        double* dkrow = dk->ptr() + co * patch;
        for (std::size_t r = 0; r < patch; ++r) {
          const double* crow = c + r * spatial;
          double s = 0.0;
          for (std::size_t j = 0; j < spatial; ++j) s += grow[j] * crow[j];
          dkrow[r] += s;
        }
      }
    }
    if (dx) {
      double* dst = dx->ptr() + n * g.cin * g.h * g.w;
      if (is_pointwise(g)) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* grow = go + co * spatial;
          const double* wrow = k.ptr() + co * patch;
          for (std::size_t r = 0; r < patch; ++r) {
            const double wv = wrow[r];
            if (wv == 0.0) continue;
            double* drow = dst + r * spatial;
            for (std::size_t j = 0; j < spatial; ++j) drow[j] += wv * grow[j];
          }
        }
      } else {
        dcols.assign(patch * spatial, 0.0);
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* grow = go + co * spatial;
          const double* wrow = k.ptr() + co * patch;
          for (std::size_t r = 0; r < patch; ++r) {
            const double wv = wrow[r];
            if (wv == 0.0) continue;
            double* drow = dcols.data() + r * spatial;
            for (std::size_t j = 0; j < spatial; ++j) drow[j] += wv * grow[j];
          }
        }
        col2im_add(g, dcols, dst);
      }
    }
  }
}

void conv_backward_direct(const ConvGeometry& g, const Tensor& x,
                          const Tensor& k, const Tensor& gout, Tensor* dx,
                          Tensor* dk, Tensor* db) {
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const double go = gout.at(n, co, oy, ox);
          if (db) (*db)[co] += go;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const long iy = static_cast<long>(oy * g.stride + ky) -
                              static_cast<long>(g.pad);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long ix = static_cast<long>(ox * g.stride + kx) -
                                static_cast<long>(g.pad);
                if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                if (dk) dk->at(co, ci, ky, kx) += go * x.at(n, ci, iy, ix);
                if (dx) dx->at(n, ci, iy, ix) += go * k.at(co, ci, ky, kx);
              }
            }
        }
}

}  // namespace

Var conv2d(Var x, Var kernel, std::optional<Var> bias, ConvOptions opts) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const ConvGeometry g = conv_geometry(xv, kv, opts);
  const Tensor* bv = nullptr;
  if (bias) {
    bv = &bias->value();
    if (bv->size() != g.cout)
      throw ValidationError("conv2d: bias shape " + shape_str(bv->shape()) +
                            " does not match kernel " + shape_str(kv.shape()));
  }
  Tensor out({g.n, g.cout, g.oh, g.ow});
  if (opts.algo == ConvAlgo::kDirect)
    conv_forward_direct(g, xv, kv, bv, out);
  else
    conv_forward_im2col(g, xv, kv, bv, out);

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(
      std::move(out), inputs,
      [x, kernel, bias, g, algo = opts.algo](Tape& t, const Tensor& gout) {
        Tensor* dx = t.grad_sink(x);
        Tensor* dk = t.grad_sink(kernel);
        Tensor* db = bias ? t.grad_sink(*bias) : nullptr;
        if (algo == ConvAlgo::kDirect)
          conv_backward_direct(g, x.value(), kernel.value(), gout, dx, dk, db);
        else
          conv_backward_im2col(g, x.value(), kernel.value(), gout, dx, dk, db);
      });
}

Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean,
                Tensor& running_var, BatchNormOptions opts) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "batchnorm2d", "input");
  if (!(opts.eps > 0.0)) throw ValidationError("batchnorm2d: eps must be > 0");
  if (!(opts.momentum > 0.0 && opts.momentum < 1.0))
    throw ValidationError("batchnorm2d: momentum must lie in (0,1)");
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{
           &gamma.value(), &beta.value(), &running_mean, &running_var})
    if (t->size() != c)
      throw ValidationError("batchnorm2d: per-channel tensor " +
                            shape_str(t->shape()) + " does not match input " +
                            shape_str(xv.shape()));
  const double count = static_cast<double>(n * hw);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  // x_hat and 1/sqrt(var+eps) are what backward needs.
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (opts.mode == Mode::kTrain) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
      running_mean[ch] =
          (1.0 - opts.momentum) * running_mean[ch] + opts.momentum * mean;
      running_var[ch] =
          (1.0 - opts.momentum) * running_var[ch] + opts.momentum * unbiased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + opts.eps);
    for (std::size_t b = 0; b < n; ++b) {
      const double* p = xv.ptr() + (b * c + ch) * hw;
      double* q = xhat.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) q[i] = (p[i] - mean) * inv_std[ch];
    }
  }
  Tensor out(xv.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* q = xhat.ptr() + (b * c + ch) * hw;
      double* o = out.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) o[i] = gv[ch] * q[i] + bv[ch];
    }

  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
       c, hw, count, mode = opts.mode](Tape& t, const Tensor& gout) {
        const Tensor& gv = gamma.value();
        Tensor* dx = t.grad_sink(x);
        Tensor* dg = t.grad_sink(gamma);
        Tensor* dbeta = t.grad_sink(beta);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const double* go = gout.ptr() + (b * c + ch) * hw;
            const double* q = xhat.ptr() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += go[i];
              sum_gx += go[i] * q[i];
            }
          }
          if (dg) (*dg)[ch] += sum_gx;
          if (dbeta) (*dbeta)[ch] += sum_g;
          if (!dx) continue;
          const double scale = gv[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const double* go = gout.ptr() + (b * c + ch) * hw;
            const double* q = xhat.ptr() + (b * c + ch) * hw;
            double* d = dx->ptr() + (b * c + ch) * hw;
            if (mode == Mode::kTrain) {
              for (std::size_t i = 0; i < hw; ++i)
                d[i] += scale * (go[i] - sum_g / count - q[i] * sum_gx / count);
            } else {
              for (std::size_t i = 0; i < hw; ++i) d[i] += scale * go[i];
            }
          }
        }
      });
}

Var apply_activation(Var x, Activation act) {
  const Tensor& xv = x.value();
  if (act.kind == ActivationKind::kLeakyRelu &&
      !(act.slope > 0.0 && act.slope < 1.0))
    throw ValidationError("leaky_relu slope must lie in (0,1)");
  if (!xv.all_finite())
    throw NumericError("activation received nonfinite input of shape " +
                       shape_str(xv.shape()));
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    switch (act.kind) {
      case ActivationKind::kRelu: out[i] = v > 0.0 ? v : 0.0; break;
      case ActivationKind::kLeakyRelu: out[i] = v > 0.0 ? v : act.slope * v; break;
      case ActivationKind::kSigmoid: out[i] = sigmoid_scalar(v); break;
    }
  }
  Tensor saved = act.kind == ActivationKind::kSigmoid ? out : Tensor();
  return x.tape().record(
      std::move(out), {x},
      [x, act, saved = std::move(saved)](Tape& t, const Tensor& gout) {
        Tensor* dx = t.grad_sink(x);
        if (!dx) return;
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < gout.size(); ++i) {
          double d;
          switch (act.kind) {
            case ActivationKind::kRelu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
            case ActivationKind::kLeakyRelu:
              d = xv[i] > 0.0 ? 1.0 : act.slope;
              break;
            default: d = saved[i] * (1.0 - saved[i]); break;
          }
          (*dx)[i] += d * gout[i];
        }
      });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "global_avg_pool", "input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, c, 1, 1});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const double* p = xv.ptr() + i * hw;
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / static_cast<double>(hw);
  }
  return x.tape().record(std::move(out), {x},
                         [x, n, c, hw](Tape& t, const Tensor& gout) {
                           Tensor* dx = t.grad_sink(x);
                           if (!dx) return;
                           const double inv = 1.0 / static_cast<double>(hw);
                           for (std::size_t i = 0; i < n * c; ++i) {
                             double* d = dx->ptr() + i * hw;
                             const double g = gout[i] * inv;
                             for (std::size_t j = 0; j < hw; ++j) d[j] += g;
                           }
                         });
}

Var upsample_nearest2x(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "upsample_nearest2x", "input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          out.at(b, ch, y, xx) = xv.at(b, ch, y / 2, xx / 2);
  return x.tape().record(std::move(out), {x},
                         [x, n, c, h, w](Tape& t, const Tensor& gout) {
                           Tensor* dx = t.grad_sink(x);
                           if (!dx) return;
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t ch = 0; ch < c; ++ch)
                               for (std::size_t y = 0; y < 2 * h; ++y)
                                 for (std::size_t xx = 0; xx < 2 * w; ++xx)
                                   dx->at(b, ch, y / 2, xx / 2) +=
                                       gout.at(b, ch, y, xx);
                         });
}

Var concat_channels(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 4, "concat_channels", "a");
  require_rank(bv, 4, "concat_channels", "b");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw ValidationError("concat_channels: batch/spatial mismatch between " +
                          shape_str(av.shape()) + " and " +
                          shape_str(bv.shape()));
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1),
                    hw = av.dim(2) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.ptr() + i * ca * hw, ca * hw, out.ptr() + i * (ca + cb) * hw);
    std::copy_n(bv.ptr() + i * cb * hw, cb * hw,
                out.ptr() + (i * (ca + cb) + ca) * hw);
  }
  return a.tape().record(
      std::move(out), {a, b}, [a, b, n, ca, cb, hw](Tape& t, const Tensor& g) {
        if (Tensor* da = t.grad_sink(a))
          for (std::size_t i = 0; i < n; ++i) {
            const double* src = g.ptr() + i * (ca + cb) * hw;
            double* dst = da->ptr() + i * ca * hw;
            for (std::size_t j = 0; j < ca * hw; ++j) dst[j] += src[j];
          }
        if (Tensor* db = t.grad_sink(b))
          for (std::size_t i = 0; i < n; ++i) {
            const double* src = g.ptr() + (i * (ca + cb) + ca) * hw;
            double* dst = db->ptr() + i * cb * hw;
            for (std::size_t j = 0; j < cb * hw; ++j) dst[j] += src[j];
          }
      });
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "slice_channels", "input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (count == 0 || begin + count > c)
    throw ValidationError("slice_channels: range [" + std::to_string(begin) +
                          ", " + std::to_string(begin + count) +
                          ") out of bounds for " + shape_str(xv.shape()));
  Tensor out({n, count, xv.dim(2), xv.dim(3)});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv.ptr() + (i * c + begin) * hw, count * hw,
                out.ptr() + i * count * hw);
  return x.tape().record(std::move(out), {x},
                         [x, n, c, hw, begin, count](Tape& t, const Tensor& g) {
                           Tensor* dx = t.grad_sink(x);
                           if (!dx) return;
                           for (std::size_t i = 0; i < n; ++i) {
                             const double* src = g.ptr() + i * count * hw;
                             double* dst = dx->ptr() + (i * c + begin) * hw;
                             for (std::size_t j = 0; j < count * hw; ++j)
                               dst[j] += src[j];
                           }
                         });
}

Var linear(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 2, "linear", "input");
  require_rank(wv, 2, "linear", "weight");
  if (xv.dim(1) != wv.dim(1) || bv.size() != wv.dim(0))
    throw ValidationError("linear: dimension mismatch between input " +
                          shape_str(xv.shape()) + ", weight " +
                          shape_str(wv.shape()) + " and bias " +
                          shape_str(bv.shape()));
  const std::size_t n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double s = bv[j];
      for (std::size_t k = 0; k < f; ++k) s += wv[j * f + k] * xv[i * f + k];
      out[i * o + j] = s;
    }
  return x.tape().record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, n, f, o](Tape& t, const Tensor& g) {
        Tensor* dx = t.grad_sink(x);
        Tensor* dw = t.grad_sink(weight);
        Tensor* db = t.grad_sink(bias);
        const Tensor& xv = x.value();
        const Tensor& wv = weight.value();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j) {
            const double gv = g[i * o + j];
            if (db) (*db)[j] += gv;
            for (std::size_t k = 0; k < f; ++k) {
              if (dw) (*dw)[j * f + k] += gv * xv[i * f + k];
              if (dx) (*dx)[i * f + k] += gv * wv[j * f + k];
            }
          }
      });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw ValidationError("add: shape mismatch " + shape_str(av.shape()) +
                          " vs " + shape_str(bv.shape()));
  Tensor out = av;
  out.add_inplace(bv);
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape& t, const Tensor& g) {
                           if (Tensor* da = t.grad_sink(a)) da->add_inplace(g);
                           if (Tensor* db = t.grad_sink(b)) db->add_inplace(g);
                         });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw ValidationError("mul: shape mismatch " + shape_str(av.shape()) +
                          " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (Tensor* da = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * bv[i];
    if (Tensor* db = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * av[i];
  });
}

Var channel_scale(Var x, Var gate) {
  const Tensor& xv = x.value();
  const Tensor& sv = gate.value();
  require_rank(xv, 4, "channel_scale", "input");
  if (sv.shape() != Shape{xv.dim(0), xv.dim(1), 1, 1})
    throw ValidationError("channel_scale: gate " + shape_str(sv.shape()) +
                          " does not match input " + shape_str(xv.shape()));
  const std::size_t nc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t j = 0; j < hw; ++j)
      out[i * hw + j] = xv[i * hw + j] * sv[i];
  return x.tape().record(std::move(out), {x, gate},
                         [x, gate, nc, hw](Tape& t, const Tensor& g) {
                           const Tensor& xv = x.value();
                           const Tensor& sv = gate.value();
                           Tensor* dx = t.grad_sink(x);
                           Tensor* ds = t.grad_sink(gate);
                           for (std::size_t i = 0; i < nc; ++i) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < hw; ++j) {
                               const double gv = g[i * hw + j];
                               if (dx) (*dx)[i * hw + j] += gv * sv[i];
                               acc += gv * xv[i * hw + j];
                             }
                             if (ds) (*ds)[i] += acc;
                           }
                         });
}

Var flatten(Var x) {
  const Tensor& xv = x.value();
  Tensor out = xv.reshaped({xv.dim(0), xv.size() / xv.dim(0)});
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* dx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
  });
}

Var gradient_reversal(Var x, double lambda) {
  if (!(lambda >= 0.0))
    throw ValidationError("gradient_reversal: lambda must be >= 0");
  Tensor out = x.value();
  return x.tape().record(std::move(out), {x},
                         [x, lambda](Tape& t, const Tensor& g) {
                           Tensor* dx = t.grad_sink(x);
                           if (!dx) return;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             (*dx)[i] += -lambda * g[i];
                         });
}

Var weighted_sum(Var x, const Tensor& weights) {
  const Tensor& xv = x.value();
  if (weights.size() != xv.size())
    throw ValidationError("weighted_sum: weights " + shape_str(weights.shape()) +
                          " do not match input " + shape_str(xv.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  return x.tape().record(Tensor::scalar(s), {x},
                         [x, weights](Tape& t, const Tensor& g) {
                           Tensor* dx = t.grad_sink(x);
                           if (!dx) return;
                           for (std::size_t i = 0; i < weights.size(); ++i)
                             (*dx)[i] += g[0] * weights[i];
                         });
}

Var sum(Var x) {
  const double s = x.value().sum();
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* dx = t.grad_sink(x);
    if (!dx) return;
    for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += g[0];
  });
}

}  // namespace adod::ops
