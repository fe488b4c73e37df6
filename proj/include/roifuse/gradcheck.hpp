#pragma once

#include <functional>
#include <string>
#include <vector>

#include "roifuse/tensor.hpp"

namespace roifuse::tensor {

/// Builds a scalar loss. With a tape the call must record onto it; with
/// nullptr it runs as plain inference.
using LossFn = std::function<Tensor(Tape*)>;

struct NamedError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<NamedError> per_tensor;
};

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every listed tensor. The error per coordinate is
/// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). eps must lie in [1e-7, 1e-4].
/// Throws std::runtime_error on non-finite intermediate values.
GradCheckResult finite_difference_check(const LossFn& f, const std::vector<Parameter>& tensors, double eps = 1e-6);

}  // namespace roifuse::tensor
