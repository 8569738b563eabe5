#pragma once

#include <cstddef>
#include <optional>

#include "adod/autograd.hpp"
#include "adod/tensor.hpp"

// Differentiable operations over Tape variables. Every op validates shapes,
// computes its forward value eagerly and records a backward closure.
namespace adod::ops {

enum class ConvAlgo { kDirect, kIm2col };

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  ConvAlgo algo = ConvAlgo::kIm2col;
};

// Cross-correlation (no kernel flip) with zero padding.
// x: [N,Cin,H,W], kernel: [Cout,Cin,kH,kW], bias: [Cout] or none.
Var conv2d(Var x, Var kernel, std::optional<Var> bias, ConvOptions opts = {});

enum class Mode { kTrain, kEval };

struct BatchNormOptions {
  Mode mode = Mode::kTrain;
  double eps = 1e-5;
  double momentum = 0.1;
};

// running_mean / running_var are [C] buffers; train mode updates them by
// exponential moving average (unbiased batch variance), eval mode reads them.
Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean,
                Tensor& running_var, BatchNormOptions opts = {});

enum class ActivationKind { kRelu, kLeakyRelu, kSigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  double slope = 0.1;  // leaky_relu only, must lie in (0,1)
};

Var apply_activation(Var x, Activation act);
inline Var relu(Var x) { return apply_activation(x, {ActivationKind::kRelu}); }
inline Var sigmoid(Var x) {
  return apply_activation(x, {ActivationKind::kSigmoid});
}
inline Var leaky_relu(Var x, double slope = 0.1) {
  return apply_activation(x, {ActivationKind::kLeakyRelu, slope});
}

// [N,C,H,W] -> [N,C,1,1] mean over each plane.
Var global_avg_pool(Var x);
// [N,C,H,W] -> [N,C,2H,2W]
Var upsample_nearest2x(Var x);
// Channels of a precede channels of b.
Var concat_channels(Var a, Var b);
// Channels [begin, begin+count) of x.
Var slice_channels(Var x, std::size_t begin, std::size_t count);
// x: [N,F], weight: [O,F], bias: [O] -> [N,O]
Var linear(Var x, Var weight, Var bias);

Var add(Var a, Var b);
Var mul(Var a, Var b);
// x: [N,C,H,W] scaled per (n,c) by gate [N,C,1,1].
Var channel_scale(Var x, Var gate);
// [N,...] -> [N, prod(rest)]
Var flatten(Var x);
// Identity forward; backward multiplies the incoming gradient by -lambda.
Var gradient_reversal(Var x, double lambda);
// Scalar [1] = sum_i weights[i] * x[i].
Var weighted_sum(Var x, const Tensor& weights);
Var sum(Var x);

// Pure tensor helpers shared with tests and non-differentiable callers.
double sigmoid_scalar(double x);
// log(1 + exp(x)) without overflow.
double softplus_scalar(double x);

}  // namespace adod::ops
