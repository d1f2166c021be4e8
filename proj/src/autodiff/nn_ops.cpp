#include <cmath>
#include <memory>
#include <string>

#include "mim/error.hpp"
#include "mim/ops.hpp"

namespace mim {

Tensor conv1d_depthwise_causal(const Tensor& seq, const Tensor& taps) {
  if (seq.rank() != 2 || taps.rank() != 2 || taps.dim(1) != seq.dim(1) || taps.dim(0) == 0) {
    throw ShapeError("conv1d_depthwise_causal: seq " + shape_str(seq.shape()) + ", taps " +
                     shape_str(taps.shape()));
  }
  const std::size_t L = seq.dim(0), D = seq.dim(1), K = taps.dim(0);
  const auto sv = seq.data();
  const auto wv = taps.data();
  std::vector<double> out(L * D, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      // source step t - (K-1) + k
      if (t + k + 1 < K) continue;
      const std::size_t src = t + k + 1 - K;
      for (std::size_t d = 0; d < D; ++d) out[t * D + d] += wv[k * D + d] * sv[src * D + d];
    }
  auto backward = [seq, taps, L, D, K](std::span<const double> g,
                                       std::span<const std::span<double>> gin) {
    const auto sv = seq.data();
    const auto wv = taps.data();
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        if (t + k + 1 < K) continue;
        const std::size_t src = t + k + 1 - K;
        for (std::size_t d = 0; d < D; ++d) {
          if (!gin[0].empty()) gin[0][src * D + d] += g[t * D + d] * wv[k * D + d];
          if (!gin[1].empty()) gin[1][k * D + d] += g[t * D + d] * sv[src * D + d];
        }
      }
  };
  return make_result("conv1d_depthwise_causal", {L, D}, std::move(out), {seq, taps}, backward);
}

Tensor conv1d_centered(const Tensor& seq, const Tensor& weight) {
  if (seq.rank() != 2 || weight.rank() != 2 || weight.dim(1) != seq.dim(1) ||
      weight.dim(0) % 2 == 0) {
    throw ShapeError("conv1d_centered: seq " + shape_str(seq.shape()) + ", weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t L = seq.dim(0), C = seq.dim(1), K = weight.dim(0);
  const std::size_t half = (K - 1) / 2;
  const auto sv = seq.data();
  const auto wv = weight.data();
  std::vector<double> out(L, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      if (t + k < half || t + k - half >= L) continue;
      const std::size_t src = t + k - half;
      for (std::size_t c = 0; c < C; ++c) out[t] += wv[k * C + c] * sv[src * C + c];
    }
  auto backward = [seq, weight, L, C, K, half](std::span<const double> g,
                                               std::span<const std::span<double>> gin) {
    const auto sv = seq.data();
    const auto wv = weight.data();
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t k = 0; k < K; ++k) {
        if (t + k < half || t + k - half >= L) continue;
        const std::size_t src = t + k - half;
        for (std::size_t c = 0; c < C; ++c) {
          if (!gin[0].empty()) gin[0][src * C + c] += g[t] * wv[k * C + c];
          if (!gin[1].empty()) gin[1][k * C + c] += g[t] * sv[src * C + c];
        }
      }
  };
  return make_result("conv1d_centered", {L, 1}, std::move(out), {seq, weight}, backward);
}

std::pair<std::size_t, std::size_t> pool_window(std::size_t i, std::size_t in_side,
                                                std::size_t out_side) {
  const std::size_t begin = (i * in_side) / out_side;
  const std::size_t end = ((i + 1) * in_side + out_side - 1) / out_side;
  return {begin, end};
}

Tensor adaptive_avg_pool2d(const Tensor& grid, std::size_t out_side) {
  if (grid.rank() != 3 || grid.dim(0) != grid.dim(1)) {
    throw ShapeError("adaptive_avg_pool2d expects [p x p x D], got " + shape_str(grid.shape()));
  }
  const std::size_t p = grid.dim(0), D = grid.dim(2), q = out_side;
  if (p % 2 == 0 || q % 2 == 0 || q < 1 || q > p) {
    throw ShapeError("adaptive_avg_pool2d needs odd sizes with 1 <= out <= in, got " +
                     std::to_string(p) + " -> " + std::to_string(q));
  }
  const auto v = grid.data();
  std::vector<double> out(q * q * D, 0.0);
  for (std::size_t i = 0; i < q; ++i) {
    const auto [r0, r1] = pool_window(i, p, q);
    for (std::size_t j = 0; j < q; ++j) {
      const auto [c0, c1] = pool_window(j, p, q);
      const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
      double* o = out.data() + (i * q + j) * D;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c)
          for (std::size_t d = 0; d < D; ++d) o[d] += v[(r * p + c) * D + d] * inv;
    }
  }
  auto backward = [p, q, D](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t i = 0; i < q; ++i) {
      const auto [r0, r1] = pool_window(i, p, q);
      for (std::size_t j = 0; j < q; ++j) {
        const auto [c0, c1] = pool_window(j, p, q);
        const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
        const double* go = g.data() + (i * q + j) * D;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c)
            for (std::size_t d = 0; d < D; ++d) gx[(r * p + c) * D + d] += go[d] * inv;
      }
    }
  };
  return make_result("adaptive_avg_pool2d", {q, q, D}, std::move(out), {grid}, backward);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1)) {
    throw ShapeError("layer_norm: x " + shape_str(x.shape()) + ", gamma " +
                     shape_str(gamma.shape()));
  }
  const std::size_t L = x.dim(0), D = x.dim(1);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(L * D);
  auto inv_std = std::make_shared<std::vector<double>>(L);
  std::vector<double> out(L * D);
  for (std::size_t t = 0; t < L; ++t) {
    double mu = 0;
    for (std::size_t d = 0; d < D; ++d) mu += xv[t * D + d];
    mu /= static_cast<double>(D);
    double var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (xv[t * D + d] - mu) * (xv[t * D + d] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[t] = is;
    for (std::size_t d = 0; d < D; ++d) {
      const double h = (xv[t * D + d] - mu) * is;
      (*xhat)[t * D + d] = h;
      out[t * D + d] = gv[d] * h + bv[d];
    }
  }
  auto backward = [gamma, xhat, inv_std, L, D](std::span<const double> g,
                                               std::span<const std::span<double>> gin) {
    const auto gv = gamma.data();
    for (std::size_t t = 0; t < L; ++t) {
      const double* gr = g.data() + t * D;
      const double* h = xhat->data() + t * D;
      if (!gin[0].empty()) {
        double m1 = 0, m2 = 0;
        for (std::size_t d = 0; d < D; ++d) {
          const double gh = gr[d] * gv[d];
          m1 += gh;
          m2 += gh * h[d];
        }
        m1 /= static_cast<double>(D);
        m2 /= static_cast<double>(D);
        for (std::size_t d = 0; d < D; ++d)
          gin[0][t * D + d] += (*inv_std)[t] * (gr[d] * gv[d] - m1 - h[d] * m2);
      }
      for (std::size_t d = 0; d < D; ++d) {
        if (!gin[1].empty()) gin[1][d] += gr[d] * h[d];
        if (!gin[2].empty()) gin[2][d] += gr[d];
      }
    }
  };
  return make_result("layer_norm", {L, D}, std::move(out), {x, gamma, beta}, backward);
}

}  // namespace mim
