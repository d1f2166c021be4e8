#include <bit>
#include <cmath>

#include "mim/error.hpp"
#include "mim/ssm.hpp"

namespace mim::ssm {

ZohCoefficients zoh(double a, double delta) {
  if (!(delta > 0)) throw NumericError("zoh: delta must be positive");
  const double x = delta * a;
  ZohCoefficients z;
  // One transcendental per entry: expm1 near zero where exp(x) - 1 would
  // cancel, exp elsewhere.
  if (std::abs(x) < kZohTaylorThreshold) {
    z.abar = 1.0 + x + 0.5 * x * x;
    z.b_coef = delta * (1.0 + 0.5 * x);
  } else if (std::abs(x) < kZohExpm1Band) {
    const double em = std::expm1(x);
    z.abar = 1.0 + em;
    z.b_coef = em / a;
  } else {
    z.abar = std::exp(x);
    z.b_coef = (z.abar - 1.0) / a;
  }
  return z;
}

ZohDerivatives zoh_b_coef_derivatives(double a, double delta) {
  return zoh_b_coef_derivatives(a, delta, zoh(a, delta));
}

ZohDerivatives zoh_b_coef_derivatives(double a, double delta, const ZohCoefficients& z) {
  const double x = delta * a;
  ZohDerivatives d;
  if (std::abs(x) < kZohTaylorThreshold) {
    d.d_delta = 1.0 + x;
    d.d_a = 0.5 * delta * delta;
  } else {
    d.d_delta = z.abar;
    d.d_a = (x * z.abar - z.b_coef * a) / (a * a);
  }
  return d;
}

std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta) {
  if (a.shape() != b.shape() || a.shape() != delta.shape()) {
    throw ShapeError("zoh_discretize: A, B and delta must share a shape");
  }
  std::vector<double> abar(a.numel()), bbar(a.numel());
  const auto av = a.data(), bv = b.data(), dv = delta.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const auto z = zoh(av[i], dv[i]);
    abar[i] = z.abar;
    bbar[i] = z.b_coef * bv[i];
  }
  return {Tensor::from_data(a.shape(), std::move(abar)),
          Tensor::from_data(a.shape(), std::move(bbar))};
}

void inclusive_scan_blelloch(std::span<ScanElement> elements) {
  const std::size_t len = elements.size();
  if (len <= 1) return;
  const std::size_t n = std::bit_ceil(len);
  std::vector<ScanElement> tree(n);
  std::copy(elements.begin(), elements.end(), tree.begin());

  for (std::size_t d = 1; d < n; d *= 2)
    for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) tree[i] = combine(tree[i - d], tree[i]);

  tree[n - 1] = ScanElement{};
  for (std::size_t d = n / 2; d >= 1; d /= 2) {
    for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) {
      const ScanElement left = tree[i - d];
      tree[i - d] = tree[i];
      tree[i] = combine(tree[i], left);
    }
  }
  // tree now holds the exclusive prefix of every element.
  for (std::size_t k = 0; k < len; ++k) elements[k] = combine(tree[k], elements[k]);
}

}  // namespace mim::ssm
