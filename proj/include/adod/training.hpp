#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adod/autograd.hpp"
#include "adod/config.hpp"
#include "adod/datasets.hpp"
#include "adod/network.hpp"

namespace adod {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 300;
  double lambda_coord = 5.0;
  double lambda_obj = 1.0;
  double lambda_noobj = 0.5;
  double lambda_cls = 1.0;
  double lambda_domain = 0.1;
  double grl_lambda = 0.1;
  double ignore_iou = 0.5;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv);
  static const std::vector<std::string>& keys();
};

struct LossBreakdown {
  double coord = 0.0, obj = 0.0, noobj = 0.0, cls = 0.0, domain = 0.0;
  double total = 0.0;

  // Weighted sum using the config's lambdas.
  static double weighted_total(const LossBreakdown& l, const TrainConfig& cfg);
};

// Per-scale targets; slot index = ((n * 3 + a) * S + cy) * S + cx.
struct ScaleTargets {
  std::size_t grid = 0;
  std::vector<std::uint8_t> assigned;
  std::vector<std::uint8_t> ignored;  // unassigned but overlapping a GT
  std::vector<double> tx, ty, tw, th;  // tx/ty as logits of the cell offset
  std::vector<double> offset_x, offset_y;  // cell offsets in [0,1)
  std::vector<std::size_t> class_id;

  std::size_t slot(std::size_t n, std::size_t a, std::size_t cy, std::size_t cx) const {
    return ((n * kAnchorsPerScale + a) * grid + cy) * grid + cx;
  }
};

struct Targets {
  std::size_t batch = 0;
  std::array<ScaleTargets, kNumScales> scales;
  std::size_t clamp_warnings = 0;  // boxes whose size was clamped at 1e-6
};

// Each GT goes to the single best-shape anchor among all nine, at the cell
// holding its center on that anchor's scale.
Targets build_targets(const std::vector<std::vector<GroundTruthBox>>& gts,
                      const NetworkSpec& spec, double ignore_iou = 0.5);

struct YoloLoss {
  LossBreakdown parts;  // domain left at 0
  Var total;            // scalar, weighted detection terms
};
YoloLoss yolo_loss(const std::array<Var, kNumScales>& heads, const Targets& targets,
                   const NetworkSpec& spec, const TrainConfig& cfg);

struct DomainLoss {
  double cross_entropy = 0.0;  // mean over heads and batch
  Var term;                    // lambda_domain * cross_entropy
};
DomainLoss domain_loss(const std::array<Var, kNumScales>& logits,
                       const std::vector<std::size_t>& domain_ids, double lambda_domain);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
  std::uint64_t t = 0;
};

// Bias-corrected Adam over every requires_grad parameter; absent gradients
// count as zero.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamOptions& opts);

struct EpochMetrics {
  std::size_t epoch = 0;
  LossBreakdown loss;  // mean over batches
  double seconds = 0.0;
};

struct TrainOptions {
  std::string out_dir;  // empty: keep everything in memory
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t clamp_warnings = 0;
};

// Loss on one batch, with the tape left ready for backward.
struct BatchLoss {
  LossBreakdown parts;
  Var total;
};
BatchLoss compute_batch_loss(Tape& tape, const Network& net, const Tensor& images,
                             const std::vector<std::vector<GroundTruthBox>>& gts,
                             const std::vector<std::size_t>& domain_ids,
                             const TrainConfig& cfg,
                             DomainCoupling coupling = DomainCoupling::kReversed);

Tensor stack_images(const std::vector<const Tensor*>& images);

TrainResult train(Network& net, const std::vector<LoadedSample>& data, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// Fraction of samples each domain head classifies correctly (eval mode).
std::array<double, kNumScales> domain_accuracy(const Network& net,
                                               const std::vector<LoadedSample>& data,
                                               std::size_t batch_size = 8);

}  // namespace adod
