#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "mim/error.hpp"
#include "mim/ops.hpp"

namespace mim {

namespace {

std::atomic<bool> g_corrupt_silu{false};

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank, const Shape& out) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t st = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t axis_in = s.size() - 1 - k;
    const std::size_t axis_out = rank - 1 - k;
    strides[axis_out] = (s[axis_in] == 1 && out[axis_out] != 1) ? 0 : st;
    st *= s[axis_in];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    p.out[rank - 1 - k] = std::max(da, db);
  }
  p.stride_a = aligned_strides(a, rank, p.out);
  p.stride_b = aligned_strides(b, rank, p.out);
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_pair(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (counter[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * p.out[ax];
      ib -= p.stride_b[ax] * p.out[ax];
      counter[ax] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(shape_numel(plan.out));
  for_each_pair(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    switch (op) {
      case BinOp::Add: out[o] = av[i] + bv[j]; break;
      case BinOp::Sub: out[o] = av[i] - bv[j]; break;
      case BinOp::Mul: out[o] = av[i] * bv[j]; break;
      case BinOp::Div: out[o] = av[i] / bv[j]; break;
    }
  });
  auto backward = [a, b, plan, op](std::span<const double> g, std::span<const std::span<double>> gin) {
    const auto av = a.data();
    const auto bv = b.data();
    auto ga = gin[0];
    auto gb = gin[1];
    for_each_pair(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
      switch (op) {
        case BinOp::Add:
          if (!ga.empty()) ga[i] += g[o];
          if (!gb.empty()) gb[j] += g[o];
          break;
        case BinOp::Sub:
          if (!ga.empty()) ga[i] += g[o];
          if (!gb.empty()) gb[j] -= g[o];
          break;
        case BinOp::Mul:
          if (!ga.empty()) ga[i] += g[o] * bv[j];
          if (!gb.empty()) gb[j] += g[o] * av[i];
          break;
        case BinOp::Div:
          if (!ga.empty()) ga[i] += g[o] / bv[j];
          if (!gb.empty()) gb[j] -= g[o] * av[i] / (bv[j] * bv[j]);
          break;
      }
    });
  };
  return make_result(name, plan.out, std::move(out), {a, b}, backward);
}

// Unary op with derivative expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  auto backward = [x, y, df](std::span<const double> g, std::span<const std::span<double>> gin) {
    const auto xv = x.data();
    auto gx = gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], (*y)[i]);
  };
  return make_result(name, x.shape(), std::move(out), {x}, backward);
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) {
  if (v > 30.0) return v;
  return std::log1p(std::exp(v));
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

namespace testing_hooks {
void set_corrupt_silu_backward(bool on) { g_corrupt_silu.store(on); }
bool corrupt_silu_backward() { return g_corrupt_silu.load(); }
}  // namespace testing_hooks

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor neg(const Tensor& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, "add_scalar", [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2 * v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0)) throw NumericError("log of non-positive value");
  }
  return unary(x, "log", [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        const double d = s * (1.0 + v * (1.0 - s));
        return g_corrupt_silu.load(std::memory_order_relaxed) ? 1.1 * d : d;
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis, "sum");
  const auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += xv[(o * sp.extent + k) * sp.inner + i];
  auto backward = [sp](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          gx[(o * sp.extent + k) * sp.inner + i] += g[o * sp.inner + i];
  };
  return make_result("sum", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                     backward);
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto sp = split_axis(x.shape(), axis, "max");
  if (sp.extent == 0) throw ShapeError("max over empty axis");
  const auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = xv[(o * sp.extent) * sp.inner + i];
      for (std::size_t k = 1; k < sp.extent; ++k) {
        const double v = xv[(o * sp.extent + k) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = (o * sp.extent + best) * sp.inner + i;
    }
  auto backward = [arg](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t j = 0; j < g.size(); ++j) gx[arg[j]] += g[j];
  };
  return make_result("max", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                     backward);
}

Tensor sum_all(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  auto backward = [](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (auto& v : gin[0]) v += g[0];
  };
  return make_result("sum_all", {}, {s}, {x}, backward);
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * sp.extent + k) * sp.inner + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) m = std::max(m, xv[idx(k)]);
      double z = 0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        out[idx(k)] = std::exp(xv[idx(k)] - m);
        z += out[idx(k)];
      }
      for (std::size_t k = 0; k < sp.extent; ++k) out[idx(k)] /= z;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  auto backward = [sp, y](std::span<const double> g, std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * sp.extent + k) * sp.inner + i; };
        double dot = 0;
        for (std::size_t k = 0; k < sp.extent; ++k) dot += g[idx(k)] * (*y)[idx(k)];
        for (std::size_t k = 0; k < sp.extent; ++k)
          gx[idx(k)] += (*y)[idx(k)] * (g[idx(k)] - dot);
      }
  };
  return make_result("softmax", x.shape(), std::move(out), {x}, backward);
}

Tensor cross_entropy_with_softmax(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t rows = 0, k = 0;
  if (logits.rank() == 1) {
    rows = 1;
    k = logits.dim(0);
  } else if (logits.rank() == 2) {
    rows = logits.dim(0);
    k = logits.dim(1);
  } else {
    throw ShapeError("cross_entropy expects [B x K] or [K] logits, got " +
                     shape_str(logits.shape()));
  }
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count mismatch");
  for (auto l : labels) {
    if (l >= k) throw DataError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  const auto xv = logits.data();
  auto probs = std::make_shared<std::vector<double>>(xv.size());
  double loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * k;
    const double m = *std::max_element(row, row + k);
    double z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - m);
    const double logz = m + std::log(z);
    for (std::size_t c = 0; c < k; ++c) (*probs)[r * k + c] = std::exp(row[c] - logz);
    loss += logz - row[labels[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto backward = [probs, lab, rows, k](std::span<const double> g,
                                        std::span<const std::span<double>> gin) {
    auto gx = gin[0];
    const double s = g[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < k; ++c)
        gx[r * k + c] += s * ((*probs)[r * k + c] - (c == lab[r] ? 1.0 : 0.0));
  };
  return make_result("cross_entropy", {}, {loss}, {logits}, backward);
}

}  // namespace mim
