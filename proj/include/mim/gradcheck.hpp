#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mim/tensor.hpp"

namespace mim {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element
/// of x. `f` must be deterministic; throws NumericError if it returns a
/// non-finite value, std::invalid_argument if step <= 0.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0;
  std::size_t elements = 0;
  bool passed = false;
};

/// Compares grad() of `loss_fn(inputs)` against central differences for
/// every input; all inputs must require gradients.
GradCheckReport check_gradients(const std::string& name,
                                const std::function<Tensor(std::span<const Tensor>)>& loss_fn,
                                std::span<const Tensor> inputs, double tolerance,
                                double step = 1e-5);

}  // namespace mim
