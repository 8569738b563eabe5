#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adod/autograd.hpp"
#include "adod/blocks.hpp"
#include "adod/config.hpp"

namespace adod {

struct Anchor {
  double w = 0.0;  // input pixels
  double h = 0.0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

inline constexpr std::size_t kNumScales = 3;
inline constexpr std::size_t kAnchorsPerScale = 3;

// Scale 0 is the coarsest head (stride 32), scale 2 the finest (stride 8).
inline constexpr std::array<std::size_t, kNumScales> kScaleStrides{32, 16, 8};
inline constexpr std::array<const char*, kNumScales> kScaleNames{"coarse", "mid", "fine"};

struct NetworkSpec {
  std::size_t input_width = 416;
  std::vector<std::size_t> stage_widths{8, 16, 32, 64, 128};
  std::vector<std::size_t> blocks_per_stage{1, 1, 1, 1, 1};
  std::size_t num_classes = 5;
  // Nine anchors sorted small to large; empty means the YOLOv3 defaults
  // scaled to input_width.
  std::vector<Anchor> anchors;
  bool use_residual = false;
  bool use_channel_attention = false;
  bool use_domain = false;
  std::size_t num_domains = 2;
  std::size_t attention_reduction = ChannelAttentionBlock::kDefaultReduction;
  // 0 selects half the block's channel count (at least 1).
  std::size_t residual_mid_channels = 0;
  std::size_t domain_hidden_channels = 0;

  // Throws ValidationError on any broken invariant.
  void validate() const;
  std::vector<Anchor> resolved_anchors() const;
  // Anchors used by a head: scale 0 takes the three largest.
  std::array<Anchor, kAnchorsPerScale> scale_anchors(std::size_t scale) const;
  std::size_t head_channels() const { return kAnchorsPerScale * (5 + num_classes); }
  std::size_t grid_size(std::size_t scale) const {
    return input_width / kScaleStrides.at(scale);
  }

  KeyValues to_key_values() const;
  // Reads known keys; unknown keys are left for the caller to police.
  static NetworkSpec from_key_values(const KeyValues& kv);
  static const std::vector<std::string>& keys();

  std::string canonical() const;
  std::uint64_t hash() const;
};

std::vector<Anchor> default_anchors(std::size_t input_width);

// k-means over (w,h) pairs with 1 - IoU distance (boxes aligned at a common
// corner); returns k anchors sorted by area.
std::vector<Anchor> kmeans_anchors(const std::vector<Anchor>& boxes, std::size_t k,
                                   std::uint64_t seed, std::size_t iterations = 100);

struct ConvBnAct {
  Conv2d conv;
  BatchNorm2d bn;

  static ConvBnAct create(ParameterStore& store, const std::string& prefix,
                          std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride, std::uint64_t seed);
  Var forward(Var x, ops::Mode mode) const;
};

enum class DomainCoupling { kReversed, kDirect };

// Stem and stage outputs of one pass: outputs[0] is the stem, outputs[i]
// stage i-1.
struct BackboneCache {
  std::vector<Tensor> outputs;
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::kTrain;
  double grl_lambda = 0.1;
  // kDirect attaches the domain heads without reversal.
  DomainCoupling coupling = DomainCoupling::kReversed;
  bool compute_domain = true;
  // Filled with the backbone activations when set.
  BackboneCache* record_backbone = nullptr;
  // Levels [0, reuse_levels) are read from this cache as constants.
  const BackboneCache* reuse_backbone = nullptr;
  std::size_t reuse_levels = 0;
};

struct MultiScaleOutput {
  std::array<Var, kNumScales> heads;     // [N, 3(5+K), S, S]
  std::array<Var, kNumScales> features;  // input to each detection conv
  std::optional<std::array<Var, kNumScales>> domain_logits;  // [N, D]
};

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkSpec& spec() const { return spec_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }

  std::size_t residual_block_count() const;
  std::size_t attention_block_count() const;
  std::size_t domain_head_count() const;
  const ChannelAttentionBlock* attention(std::size_t scale) const;
  const ResidualBlock* residual(std::size_t scale) const;
  const DomainClassifierHead* domain_head(std::size_t scale) const;

  // Backbone level a parameter lives at (0 stem, 1 + stage index); heads and
  // domain classifiers report backbone_levels().
  std::size_t backbone_level(const std::string& parameter_name) const;
  std::size_t backbone_levels() const { return 1 + stages_.size(); }

  // images: [N, 3, W, W] with W == spec.input_width.
  MultiScaleOutput forward(Tape& tape, const Tensor& images,
                           const ForwardOptions& opts = {}) const;

 private:
  struct Stage {
    ConvBnAct down;
    std::vector<std::pair<ConvBnAct, ConvBnAct>> units;
  };
  struct Head {
    std::optional<ConvBnAct> lateral;  // absent on the coarse head
    std::vector<ConvBnAct> set;
    ConvBnAct pre;
    std::optional<ResidualBlock> residual;
    std::optional<ChannelAttentionBlock> attention;
    Conv2d detect;
    std::optional<DomainClassifierHead> domain;
  };

  NetworkSpec spec_;
  ParameterStore store_;
  ConvBnAct stem_;
  std::vector<Stage> stages_;
  std::array<std::unique_ptr<Head>, kNumScales> heads_;
};

Network build_network(const NetworkSpec& spec, std::uint64_t seed);

// Parameter and buffer snapshot with the spec hash embedded.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path, const NetworkSpec& spec);

}  // namespace adod
