#pragma once

#include <cstdint>
#include <string>

#include "adod/autograd.hpp"
#include "adod/ops.hpp"

namespace adod {

// Kaiming-uniform (fan-in) weights drawn from a stream derived from
// (seed, parameter name), so a parameter's initial value depends only on its
// name and the seed; biases start at zero.
struct Conv2d {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  ops::ConvOptions options;

  static Conv2d create(ParameterStore& store, const std::string& prefix,
                       std::size_t in_channels, std::size_t out_channels,
                       std::size_t kernel, std::size_t stride,
                       std::size_t padding, bool with_bias, std::uint64_t seed);
  Var forward(Var x) const;
};

struct BatchNorm2d {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm2d create(ParameterStore& store, const std::string& prefix,
                            std::size_t channels);
  Var forward(Var x, ops::Mode mode) const;
};

struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& prefix,
                       std::size_t in_features, std::size_t out_features,
                       std::uint64_t seed);
  Var forward(Var x) const;
};

// Squeeze-style channel gate: pool -> 1x1 down -> relu -> 1x1 up -> sigmoid,
// then rescale the input per channel.
class ChannelAttentionBlock {
 public:
  static constexpr std::size_t kDefaultReduction = 16;

  ChannelAttentionBlock(ParameterStore& store, const std::string& prefix,
                        std::size_t channels,
                        std::size_t reduction_ratio = kDefaultReduction,
                        bool with_bias = false, std::uint64_t seed = 0);

  std::size_t channels() const { return channels_; }
  std::size_t hidden() const { return hidden_; }
  const Conv2d& conv_down() const { return down_; }
  const Conv2d& conv_up() const { return up_; }

  // [N,C,1,1] gate in (0,1).
  Var gate(Var x) const;
  Var forward(Var x) const;

 private:
  std::size_t channels_;
  std::size_t hidden_;
  Conv2d down_;
  Conv2d up_;
};

// Bottleneck with additive skip: 1x1 -> BN -> ReLU -> 3x3 -> BN -> 1x1, no
// activation after the addition.
class ResidualBlock {
 public:
  ResidualBlock(ParameterStore& store, const std::string& prefix,
                std::size_t channels, std::size_t mid_channels,
                std::uint64_t seed = 0);

  std::size_t channels() const { return channels_; }
  std::size_t mid_channels() const { return mid_; }
  const Conv2d& conv1() const { return conv1_; }
  const Conv2d& conv3() const { return conv3_; }
  const Conv2d& conv2() const { return conv2_; }
  const BatchNorm2d& bn1() const { return bn1_; }
  const BatchNorm2d& bn2() const { return bn2_; }

  Var branch(Var x, ops::Mode mode) const;
  Var forward(Var x, ops::Mode mode) const;

 private:
  std::size_t channels_;
  std::size_t mid_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  Conv2d conv3_;
  BatchNorm2d bn2_;
  Conv2d conv2_;
};

// Trunk (7x7 -> relu -> 5x5 -> relu) pooled, times an attention branch over
// the trunk output (7x7 -> relu -> 5x5 -> relu) pooled, flattened into a
// linear layer producing domain logits.
class DomainClassifierHead {
 public:
  DomainClassifierHead(ParameterStore& store, const std::string& prefix,
                       std::size_t in_channels, std::size_t hidden_channels,
                       std::size_t num_domains, std::uint64_t seed = 0);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t hidden_channels() const { return hidden_; }
  std::size_t num_domains() const { return num_domains_; }
  const Conv2d& trunk7() const { return trunk7_; }
  const Conv2d& trunk5() const { return trunk5_; }
  const Conv2d& attn7() const { return attn7_; }
  const Conv2d& attn5() const { return attn5_; }
  const Linear& feedforward() const { return ff_; }

  // [N,C,H,W] -> [N,D]
  Var forward(Var feat) const;
  // forward(gradient_reversal(feat, grl_lambda))
  Var forward_adversarial(Var feat, double grl_lambda) const;

 private:
  std::size_t in_channels_;
  std::size_t hidden_;
  std::size_t num_domains_;
  Conv2d trunk7_;
  Conv2d trunk5_;
  Conv2d attn7_;
  Conv2d attn5_;
  Linear ff_;
};

}  // namespace adod
