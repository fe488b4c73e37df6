#include "roifuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace roifuse::tensor {

namespace {

double eval(const LossFn& f) {
  const double v = f(nullptr).item();
  if (!std::isfinite(v)) throw std::runtime_error("finite-difference evaluation produced a non-finite loss");
  return v;
}

}  // namespace

GradCheckResult finite_difference_check(const LossFn& f, const std::vector<Parameter>& tensors, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw std::invalid_argument("finite-difference eps must lie in [1e-7, 1e-4]");
  for (const auto& p : tensors) {
    if (!p.tensor.requires_grad()) throw std::invalid_argument("tensor " + p.name + " does not require grad");
  }

  std::vector<std::vector<double>> analytic;
  {
    std::vector<Tensor> handles;
    for (const auto& p : tensors) handles.push_back(p.tensor);
    for (auto& h : handles) h.zero_grad();
    Tape tape;
    const Tensor loss = f(&tape);
    if (!std::isfinite(loss.item())) throw std::runtime_error("loss is non-finite");
    tape.backward(loss);
    for (auto& h : handles) {
      analytic.emplace_back(h.has_grad() ? std::vector<double>(h.grad().begin(), h.grad().end())
                                         : std::vector<double>(h.size(), 0.0));
    }
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Tensor handle = tensors[t].tensor;
    auto values = handle.mutable_data();
    NamedError err{tensors[t].name, 0.0, values.size()};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = eval(f);
      values[i] = original - eps;
      const double down = eval(f);
      values[i] = original;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[t][i];
      const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      err.max_rel_error = std::max(err.max_rel_error, rel);
    }
    result.max_rel_error = std::max(result.max_rel_error, err.max_rel_error);
    result.per_tensor.push_back(std::move(err));
  }
  return result;
}

}  // namespace roifuse::tensor
