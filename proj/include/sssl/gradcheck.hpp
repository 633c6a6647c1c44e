#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sssl/ops.hpp"

namespace sssl {

using ScalarFn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;

struct grad_check_result {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences, element by element over every input:
//   |analytic - cd| / max(|analytic|, |cd|, 1e-12)
inline grad_check_result grad_check_detailed(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) fail(errc::invalid_argument, "grad_check eps must lie in (0, 1e-2]");
  for (auto& x : inputs) {
    x = x.detach();
    x.set_requires_grad(true);
  }
  {
    Tape tape;
    Tensor<double> loss = f(inputs);
    if (loss.numel() != 1) fail(errc::invalid_argument, "grad_check needs a scalar-valued function");
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    // Inputs the function never touched on the tape have a zero gradient.
    if (x.has_grad())
      analytic.emplace_back(x.grad().begin(), x.grad().end());
    else
      analytic.emplace_back(x.numel(), 0.0);
  }

  auto eval = [&]() {
    std::vector<Tensor<double>> plain;
    for (auto& x : inputs) plain.push_back(x.detach());
    return f(plain).item();
  };

  grad_check_result result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = eval();
      values[i] = original - eps;
      const double down = eval();
      values[i] = original;
      const double cd = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double rel = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-12});
      if (rel > result.max_rel_error) result = {rel, t, i};
    }
  }
  return result;
}

inline double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps = 1e-5) {
  return grad_check_detailed(f, std::move(inputs), eps).max_rel_error;
}

}  // namespace sssl
