#include "mim/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mim/error.hpp"

namespace mim {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  auto probe = x.detach();
  auto& v = probe.mutable_values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + step;
    const double fp = f(probe);
    v[i] = orig - step;
    const double fm = f(probe);
    v[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: function returned a non-finite value");
    }
    out[i] = (fp - fm) / (2 * step);
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

GradCheckReport check_gradients(const std::string& name,
                                const std::function<Tensor(std::span<const Tensor>)>& loss_fn,
                                std::span<const Tensor> inputs, double tolerance, double step) {
  GradCheckReport report;
  report.name = name;
  std::vector<Tensor> leaves(inputs.begin(), inputs.end());
  const auto analytic = grad(loss_fn(leaves), leaves);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto f = [&](const Tensor& probe) {
      NoGradGuard ng;
      std::vector<Tensor> args = leaves;
      args[k] = probe;
      return loss_fn(args).item();
    };
    const auto numeric = finite_diff_grad(f, leaves[k], step);
    report.max_rel_error =
        std::max(report.max_rel_error, max_relative_error(analytic[k].data(), numeric.data()));
    report.elements += leaves[k].numel();
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace mim
