#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "mim/hsi.hpp"

namespace mim::hsi {

Metrics compute_metrics(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t K = confusion.size();
  for (const auto& row : confusion)
    if (row.size() != K) throw std::invalid_argument("metrics: confusion matrix must be square");
  std::vector<double> rows(K, 0.0), cols(K, 0.0);
  double total = 0, diag = 0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double v = static_cast<double>(confusion[i][j]);
      rows[i] += v;
      cols[j] += v;
      total += v;
      if (i == j) diag += v;
    }
  if (total == 0) throw std::invalid_argument("metrics: confusion matrix is empty");

  Metrics m;
  m.oa = diag / total;
  m.per_class.assign(K, std::numeric_limits<double>::quiet_NaN());
  double acc_sum = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < K; ++i) {
    if (rows[i] == 0) {
      m.empty_rows.push_back(i);
      continue;
    }
    m.per_class[i] = static_cast<double>(confusion[i][i]) / rows[i];
    acc_sum += m.per_class[i];
    ++counted;
  }
  if (!m.empty_rows.empty()) {
    std::cerr << "warning: " << m.empty_rows.size()
              << " class(es) without samples excluded from AA\n";
  }
  m.aa = acc_sum / static_cast<double>(counted);
  double pe = 0;
  for (std::size_t i = 0; i < K; ++i) pe += rows[i] * cols[i];
  pe /= total * total;
  m.kappa = pe < 1 ? (m.oa - pe) / (1 - pe) : (m.oa == 1 ? 1.0 : 0.0);
  return m;
}

std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<std::size_t>& truth,
                                                       const std::vector<std::size_t>& predicted,
                                                       std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("confusion_matrix: length mismatch");
  }
  std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw std::invalid_argument("confusion_matrix: class index out of range");
    }
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

}  // namespace mim::hsi
