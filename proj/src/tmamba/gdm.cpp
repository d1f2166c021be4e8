#include <cmath>

#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/tmamba.hpp"

namespace mim::tmamba {

GdmResult gdm(const Tensor& seq) {
  if (seq.rank() != 2 || seq.dim(0) == 0) {
    throw ShapeError("gdm expects a non-empty [L x C] sequence, got " + shape_str(seq.shape()));
  }
  const std::size_t L = seq.dim(0);
  const std::size_t T = L - 1;
  GdmResult r;
  if (T == 0) {
    r.weights.w_idx = Tensor::full({1}, 1.0);
    r.weights.w_fea = Tensor::full({1}, 1.0);
    r.weights.combined = Tensor::full({1}, 1.0);
    r.masked = seq;
    return r;
  }

  // Index mask: sigma_idx = (1/T) sum_t |t - T| = (T + 1) / 2.
  const double sigma_idx = static_cast<double>(T + 1) / 2.0;
  std::vector<double> w(L);
  double total = 0;
  for (std::size_t t = 0; t < L; ++t) {
    const double u = (static_cast<double>(t) - static_cast<double>(T)) / sigma_idx;
    w[t] = std::exp(-0.5 * u * u);
    total += w[t];
  }
  for (auto& e : w) e /= total;
  r.weights.w_idx = Tensor::from_data({L}, std::move(w));

  // Feature mask from squared distances to the last (centre) step.
  const Tensor centre = slice(seq, 0, T, L);
  const Tensor dist = sum(square(sub(seq, centre)), 1);
  const Tensor sigma_fea = scale(sum_all(dist), 1.0 / static_cast<double>(T));
  if (!(sigma_fea.item() > 0)) {
    r.weights.w_fea = Tensor::full({L}, 1.0 / static_cast<double>(L));
  } else {
    const Tensor v = exp(scale(square(div(dist, sigma_fea)), -0.5));
    r.weights.w_fea = div(v, sum_all(v));
  }

  const Tensor prod = mul(r.weights.w_idx, r.weights.w_fea);
  r.weights.combined = scale(div(prod, sum_all(prod)), static_cast<double>(L));
  r.masked = mul(seq, reshape(r.weights.combined, {L, 1}));
  return r;
}

Tensor merge_cross(const Tensor& fwd, const Tensor& bwd, const Linear& merge) {
  if (fwd.rank() != 2 || fwd.shape() != bwd.shape() || fwd.dim(0) == 0) {
    throw ShapeError("merge_cross: halves " + shape_str(fwd.shape()) + " and " +
                     shape_str(bwd.shape()) + " must match");
  }
  const std::size_t T = fwd.dim(0) - 1;
  const Tensor centre = scale(add(slice(fwd, 0, T, T + 1), slice(bwd, 0, T, T + 1)), 0.5);
  if (T == 0) return apply(merge, centre);
  const Tensor parts[] = {slice(fwd, 0, 0, T), centre, reverse(slice(bwd, 0, 0, T), 0)};
  return apply(merge, concat(parts, 0));
}

}  // namespace mim::tmamba
