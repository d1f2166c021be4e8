#include <Eigen/Core>
#include <string>

#include "mim/error.hpp"
#include "mim/ops.hpp"

namespace mim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  auto backward = [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gin) {
    MapC gm(g.data(), m, n);
    if (!gin[0].empty()) {
      Map(gin[0].data(), m, k).noalias() += gm * MapC(b.data().data(), k, n).transpose();
    }
    if (!gin[1].empty()) {
      Map(gin[1].data(), k, n).noalias() += MapC(a.data().data(), m, k).transpose() * gm;
    }
  };
  return make_result("matmul", {m, n}, std::move(out), {a, b}, backward);
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), n, m) = MapC(a.data().data(), m, n).transpose();
  auto backward = [m, n](std::span<const double> g, std::span<const std::span<double>> gin) {
    Map(gin[0].data(), m, n) += MapC(g.data(), n, m).transpose();
  };
  return make_result("transpose", {n, m}, std::move(out), {a}, backward);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto backward = [](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return make_result("reshape", std::move(shape), x.to_vector(), {x}, backward);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: bad axis for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(first));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto v = parts[pi].data();
    const std::size_t block = extents[pi] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * block, block, out.data() + o * total * inner + offset * inner);
    offset += extents[pi];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  auto backward = [extents, outer, inner, total](std::span<const double> g,
                                                 std::span<const std::span<double>> gin) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t block = extents[pi] * inner;
      if (!gin[pi].empty()) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < block; ++j)
            gin[pi][o * block + j] += g[o * total * inner + offset * inner + j];
      }
      offset += extents[pi];
    }
  };
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs), backward);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ext = s[axis];
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.data() + (o * ext + begin) * inner, len * inner, out.data() + o * len * inner);
  auto backward = [outer, inner, ext, begin, len](std::span<const double> g,
                                                  std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < len * inner; ++j)
        gx[(o * ext + begin) * inner + j] += g[o * len * inner + j];
  };
  return make_result("slice", std::move(out_shape), std::move(out), {x}, backward);
}

Tensor reverse(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("reverse: bad axis for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ext = s[axis];
  auto src = [outer, inner, ext](std::size_t o, std::size_t k) {
    (void)outer;
    return (o * ext + (ext - 1 - k)) * inner;
  };
  std::vector<double> out(x.numel());
  const auto v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < ext; ++k)
      std::copy_n(v.data() + src(o, k), inner, out.data() + (o * ext + k) * inner);
  auto backward = [outer, inner, ext, src](std::span<const double> g,
                                           std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < ext; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[src(o, k) + i] += g[(o * ext + k) * inner + i];
  };
  return make_result("reverse", s, std::move(out), {x}, backward);
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("index_select on a scalar");
  const std::size_t inner = x.numel() / (s[0] == 0 ? 1 : s[0]);
  for (auto r : rows) {
    if (r >= s[0]) {
      throw ShapeError("index_select: row " + std::to_string(r) + " out of range for " +
                       shape_str(s));
    }
  }
  Shape out_shape = s;
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * inner);
  const auto v = x.data();
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(v.data() + rows[k] * inner, inner, out.data() + k * inner);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  auto backward = [idx, inner](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t i = 0; i < inner; ++i) gx[idx[k] * inner + i] += g[k * inner + i];
  };
  return make_result("index_select", std::move(out_shape), std::move(out), {x}, backward);
}

}  // namespace mim
