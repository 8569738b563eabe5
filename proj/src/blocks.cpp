#include "adod/blocks.hpp"

#include <algorithm>
#include <cmath>

#include "adod/error.hpp"
#include "adod/rng.hpp"

namespace adod {

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed,
                       const std::string& name) {
  Rng rng(derive_seed(seed, name));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

void require_channels(const Var& x, std::size_t channels, const char* block) {
  if (x.value().rank() != 4 || x.value().dim(1) != channels)
    throw ValidationError(std::string(block) + ": expected " +
                          std::to_string(channels) + " input channels, got " +
                          shape_str(x.value().shape()));
}

}  // namespace

Conv2d Conv2d::create(ParameterStore& store, const std::string& prefix,
                      std::size_t in_channels, std::size_t out_channels,
                      std::size_t kernel, std::size_t stride,
                      std::size_t padding, bool with_bias, std::uint64_t seed) {
  Conv2d c;
  const std::string wname = prefix + ".weight";
  c.weight = &store.add(
      wname, kaiming_uniform({out_channels, in_channels, kernel, kernel},
                             in_channels * kernel * kernel, seed, wname));
  if (with_bias) c.bias = &store.add(prefix + ".bias", Tensor::zeros({out_channels}));
  c.options.stride = stride;
  c.options.padding = padding;
  return c;
}

Var Conv2d::forward(Var x) const {
  Tape& t = x.tape();
  std::optional<Var> b;
  if (bias) b = t.parameter(*bias);
  return ops::conv2d(x, t.parameter(*weight), b, options);
}

BatchNorm2d BatchNorm2d::create(ParameterStore& store, const std::string& prefix,
                                std::size_t channels) {
  BatchNorm2d bn;
  bn.gamma = &store.add(prefix + ".gamma", Tensor::full({channels}, 1.0));
  bn.beta = &store.add(prefix + ".beta", Tensor::zeros({channels}));
  bn.running_mean = &store.add_buffer(prefix + ".running_mean", Tensor::zeros({channels}));
  bn.running_var = &store.add_buffer(prefix + ".running_var", Tensor::full({channels}, 1.0));
  return bn;
}

Var BatchNorm2d::forward(Var x, ops::Mode mode) const {
  Tape& t = x.tape();
  return ops::batchnorm2d(x, t.parameter(*gamma), t.parameter(*beta),
                          *running_mean, *running_var, {mode, eps, momentum});
}

Linear Linear::create(ParameterStore& store, const std::string& prefix,
                      std::size_t in_features, std::size_t out_features,
                      std::uint64_t seed) {
  Linear l;
  const std::string wname = prefix + ".weight";
  l.weight = &store.add(wname, kaiming_uniform({out_features, in_features},
                                               in_features, seed, wname));
  l.bias = &store.add(prefix + ".bias", Tensor::zeros({out_features}));
  return l;
}

Var Linear::forward(Var x) const {
  Tape& t = x.tape();
  return ops::linear(x, t.parameter(*weight), t.parameter(*bias));
}

ChannelAttentionBlock::ChannelAttentionBlock(ParameterStore& store,
                                             const std::string& prefix,
                                             std::size_t channels,
                                             std::size_t reduction_ratio,
                                             bool with_bias, std::uint64_t seed)
    : channels_(channels) {
  if (channels == 0 || reduction_ratio == 0)
    throw ValidationError("channel attention: channels and reduction ratio must be positive");
  hidden_ = std::max<std::size_t>(1, channels / reduction_ratio);
  down_ = Conv2d::create(store, prefix + ".conv_down", channels, hidden_, 1, 1, 0,
                         with_bias, seed);
  up_ = Conv2d::create(store, prefix + ".conv_up", hidden_, channels, 1, 1, 0,
                       with_bias, seed);
}

Var ChannelAttentionBlock::gate(Var x) const {
  require_channels(x, channels_, "channel attention");
  return ops::sigmoid(up_.forward(ops::relu(down_.forward(ops::global_avg_pool(x)))));
}

Var ChannelAttentionBlock::forward(Var x) const {
  return ops::channel_scale(x, gate(x));
}

ResidualBlock::ResidualBlock(ParameterStore& store, const std::string& prefix,
                             std::size_t channels, std::size_t mid_channels,
                             std::uint64_t seed)
    : channels_(channels), mid_(mid_channels) {
  if (channels == 0 || mid_channels == 0)
    throw ValidationError("residual block: channel counts must be positive");
  conv1_ = Conv2d::create(store, prefix + ".conv1", channels, mid_, 1, 1, 0, false, seed);
  bn1_ = BatchNorm2d::create(store, prefix + ".bn1", mid_);
  conv3_ = Conv2d::create(store, prefix + ".conv3", mid_, mid_, 3, 1, 1, false, seed);
  bn2_ = BatchNorm2d::create(store, prefix + ".bn2", mid_);
  conv2_ = Conv2d::create(store, prefix + ".conv2", mid_, channels, 1, 1, 0, false, seed);
}

Var ResidualBlock::branch(Var x, ops::Mode mode) const {
  require_channels(x, channels_, "residual block");
  Var h = ops::relu(bn1_.forward(conv1_.forward(x), mode));
  h = bn2_.forward(conv3_.forward(h), mode);
  return conv2_.forward(h);
}

Var ResidualBlock::forward(Var x, ops::Mode mode) const {
  return ops::add(x, branch(x, mode));
}

DomainClassifierHead::DomainClassifierHead(ParameterStore& store,
                                           const std::string& prefix,
                                           std::size_t in_channels,
                                           std::size_t hidden_channels,
                                           std::size_t num_domains,
                                           std::uint64_t seed)
    : in_channels_(in_channels), hidden_(hidden_channels), num_domains_(num_domains) {
  if (in_channels == 0 || hidden_channels == 0 || num_domains == 0)
    throw ValidationError("domain classifier: channel and domain counts must be positive");
  trunk7_ = Conv2d::create(store, prefix + ".trunk7", in_channels, hidden_, 7, 1, 3, true, seed);
  trunk5_ = Conv2d::create(store, prefix + ".trunk5", hidden_, hidden_, 5, 1, 2, true, seed);
  attn7_ = Conv2d::create(store, prefix + ".attn7", hidden_, hidden_, 7, 1, 3, true, seed);
  attn5_ = Conv2d::create(store, prefix + ".attn5", hidden_, hidden_, 5, 1, 2, true, seed);
  ff_ = Linear::create(store, prefix + ".ff", hidden_, num_domains, seed);
}

Var DomainClassifierHead::forward(Var feat) const {
  require_channels(feat, in_channels_, "domain classifier");
  Var trunk = ops::relu(trunk5_.forward(ops::relu(trunk7_.forward(feat))));
  Var attn = ops::relu(attn5_.forward(ops::relu(attn7_.forward(trunk))));
  Var fused = ops::mul(ops::global_avg_pool(trunk), ops::global_avg_pool(attn));
  return ff_.forward(ops::flatten(fused));
}

Var DomainClassifierHead::forward_adversarial(Var feat, double grl_lambda) const {
  return forward(ops::gradient_reversal(feat, grl_lambda));
}

}  // namespace adod
