#include <stdexcept>

#include "mim/hsi.hpp"

namespace mim::hsi {

std::size_t reflect_index(long index, std::size_t extent) {
  if (extent == 0) throw std::invalid_argument("reflect_index: empty extent");
  if (extent == 1) return 0;
  const long period = 2 * (static_cast<long>(extent) - 1);
  long r = index % period;
  if (r < 0) r += period;
  if (r >= static_cast<long>(extent)) r = period - r;
  return static_cast<std::size_t>(r);
}

Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t p) {
  if (p == 0 || p % 2 == 0) throw std::invalid_argument("extract_patch: p must be odd");
  if (row >= cube.height || col >= cube.width) {
    throw std::invalid_argument("extract_patch: centre outside the cube");
  }
  const long half = static_cast<long>(p / 2);
  const std::size_t C = cube.bands;
  std::vector<double> out(p * p * C);
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t r = reflect_index(static_cast<long>(row) - half + static_cast<long>(i), cube.height);
    for (std::size_t j = 0; j < p; ++j) {
      const std::size_t c = reflect_index(static_cast<long>(col) - half + static_cast<long>(j), cube.width);
      const float* src = cube.data.data() + (r * cube.width + c) * C;
      double* dst = out.data() + (i * p + j) * C;
      for (std::size_t b = 0; b < C; ++b) dst[b] = src[b];
    }
  }
  return Tensor::from_data({p, p, C}, std::move(out));
}

}  // namespace mim::hsi
