#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adod/autograd.hpp"

namespace adod {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Fraction of each parameter's elements to probe (1 = all), seeded.
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
  // Analytic gradients are compared against numeric_scale * numeric; -lambda
  // for graphs whose backward goes through a gradient reversal.
  double numeric_scale = 1.0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements straddling an activation kink
  std::size_t failed = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_error() const;
  std::size_t skipped() const;
};

// Builds a graph over the given parameters (registering them on the tape via
// Tape::parameter) and returns any output; the harness reduces it to a scalar
// with fixed seeded projection weights.
using GraphFn = std::function<Var(Tape&)>;
// Variant told which parameter was just perturbed (nullptr for the analytic
// pass), so it may reuse work that does not depend on it.
using PerturbedGraphFn = std::function<Var(Tape&, const Parameter* perturbed)>;

// Compares tape gradients against central finite differences for every
// (sampled) element of every parameter. A mismatch is retried with step
// eps/2; if that agrees the element passes, if the two steps disagree with
// each other the element sits near a kink and is skipped.
GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const GraphFn& graph,
                           const GradCheckOptions& opts = {});
GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const PerturbedGraphFn& graph,
                           const GradCheckOptions& opts = {});

}  // namespace adod
