#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "igpn/tensor.hpp"

namespace igpn {

struct GradCheckOptions {
  std::size_t seeds = 10;
  double tolerance = 1e-4;
  double eps = 1e-6;
  std::uint64_t base_seed = 0;
  std::size_t max_coordinates = 48;  ///< per leaf; larger leaves are sampled
};

struct GradCheckResult {
  std::string name;
  std::size_t seeds = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// max_i |a_i - n_i| / max(|a|_inf, |n|_inf, 1e-8)
double relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric);

/// Names of every case in the suite: each recorded operator plus the composites.
std::vector<std::string> gradient_suite_names();

/// Runs the cases whose name is in `only` (all when empty). Each seed draws fresh
/// inputs and parameters and projects the output onto a random direction before
/// comparing reverse accumulation with central differences.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options = {},
                                                const std::vector<std::string>& only = {},
                                                const std::function<void(const GradCheckResult&)>& on_result = {});

}  // namespace igpn
