#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "mim/error.hpp"
#include "mim/hsi.hpp"

namespace mim::hsi {

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw std::invalid_argument("jacobi_eigen: matrix must be n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  double scale = 0;
  for (double x : a) scale += x * x;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off <= 1e-30 * scale || off == 0) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return A(i, i) > A(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    out.values[r] = A(order[r], order[r]);
    for (std::size_t k = 0; k < n; ++k) out.vectors[r * n + k] = v[k * n + order[r]];
  }
  return out;
}

PcaModel pca_fit(const HsiCube& cube, std::size_t k) {
  if (k == 0) throw std::invalid_argument("pca: k must be >= 1");
  cube.validate();
  const std::size_t C = cube.bands, P = cube.height * cube.width;
  PcaModel m;
  m.input_bands = C;
  m.mean.assign(C, 0.0);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < C; ++c) m.mean[c] += cube.data[i * C + c];
  for (auto& v : m.mean) v /= static_cast<double>(P);

  std::vector<double> cov(C * C, 0.0);
  std::vector<double> centred(C);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < C; ++c) centred[c] = cube.data[i * C + c] - m.mean[c];
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = a; b < C; ++b) cov[a * C + b] += centred[a] * centred[b];
  }
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a; b < C; ++b) {
      cov[a * C + b] /= static_cast<double>(P);
      cov[b * C + a] = cov[a * C + b];
    }

  const auto eig = jacobi_eigen(std::move(cov), C);
  const std::size_t kept = std::min({k, C, P});
  const double top = std::max(eig.values.empty() ? 0.0 : eig.values[0], 0.0);
  const double tol = top * static_cast<double>(C) * 1e-12;
  for (double ev : eig.values)
    if (ev > tol && ev > 0) ++m.numerical_rank;
  if (m.numerical_rank < kept) {
    std::cerr << "warning: pca covariance has numerical rank " << m.numerical_rank
              << " below the " << kept << " requested components\n";
  }

  m.components.resize(kept * C);
  m.eigenvalues.resize(kept);
  for (std::size_t r = 0; r < kept; ++r) {
    m.eigenvalues[r] = std::max(eig.values[r], 0.0);
    std::size_t peak = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (std::abs(eig.vectors[r * C + c]) > std::abs(eig.vectors[r * C + peak])) peak = c;
    const double sign = eig.vectors[r * C + peak] < 0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < C; ++c) m.components[r * C + c] = sign * eig.vectors[r * C + c];
  }
  return m;
}

std::vector<double> pca_transform(const PcaModel& pca, const HsiCube& cube) {
  if (cube.bands != pca.input_bands) {
    throw DataError("pca: cube has " + std::to_string(cube.bands) + " bands, model expects " +
                    std::to_string(pca.input_bands));
  }
  const std::size_t C = cube.bands, K = pca.output_bands(), P = cube.height * cube.width;
  std::vector<double> out(P * K);
  std::vector<double> centred(C);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < C; ++c) centred[c] = cube.data[i * C + c] - pca.mean[c];
    for (std::size_t r = 0; r < K; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < C; ++c) acc += pca.components[r * C + c] * centred[c];
      out[i * K + r] = acc;
    }
  }
  return out;
}

HsiCube pca_apply(const PcaModel& pca, const HsiCube& cube) {
  const auto projected = pca_transform(pca, cube);
  HsiCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = pca.output_bands();
  out.data.assign(projected.begin(), projected.end());
  return out;
}

HsiCube pca_reduce(const HsiCube& cube, std::size_t k) { return pca_apply(pca_fit(cube, k), cube); }

}  // namespace mim::hsi
