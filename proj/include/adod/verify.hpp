#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adod/gradcheck.hpp"

namespace adod {

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  double block_tolerance = 1e-4;
  double chain_tolerance = 1e-3;
  double chain_sample_fraction = 0.1;
  double epsilon = 1e-5;
  bool include_chain = true;
  // Category whose graph gets a deliberately wrong backward appended.
  std::optional<std::string> inject_fault;
};

struct GradCheckCase {
  std::string category;  // e.g. "channel_attention", "full_chain"
  std::string op;        // op the failure is attributed to
  GradCheckReport report;
  double seconds = 0.0;
};

const std::vector<std::string>& gradcheck_categories();

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& opts);

// Identity forward whose backward scales the gradient by `factor`; the
// harness self-test fixture.
Var faulty_identity(Var x, double factor = 1.5);

}  // namespace adod
