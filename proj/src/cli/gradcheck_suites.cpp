#include <algorithm>
#include <cstdio>
#include <random>

#include "mim/cli.hpp"
#include "mim/error.hpp"
#include "mim/gradcheck.hpp"
#include "mim/ops.hpp"
#include "mim/scan.hpp"
#include "mim/ssm.hpp"

namespace mim::cli {
namespace {

using LossFn = std::function<Tensor(std::span<const Tensor>)>;

constexpr double kPrimitiveTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

/// sum(out * R) for a fixed random R keeps every output element in play.
Tensor weighted(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum_all(mul(out, uniform(out.shape(), -1, 1, rng, false)));
}

struct Case {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  std::function<Tensor(std::span<const Tensor>)> op;
};

std::vector<Case> primitive_cases() {
  auto in = [](std::vector<std::pair<Shape, std::pair<double, double>>> specs) {
    return [specs](std::mt19937_64& rng) {
      std::vector<Tensor> out;
      for (const auto& [shape, range] : specs) out.push_back(uniform(shape, range.first, range.second, rng));
      return out;
    };
  };
  const std::pair<double, double> sym{-1.0, 1.0}, pos{0.5, 1.5};
  using S = std::span<const Tensor>;
  std::vector<Case> c;
  c.push_back({"add", in({{{3, 4}, sym}, {{4}, sym}}), [](S x) { return add(x[0], x[1]); }});
  c.push_back({"sub", in({{{3, 4}, sym}, {{3, 4}, sym}}), [](S x) { return sub(x[0], x[1]); }});
  c.push_back({"mul", in({{{3, 4}, sym}, {{3, 1}, sym}}), [](S x) { return mul(x[0], x[1]); }});
  c.push_back({"div", in({{{3, 4}, sym}, {{4}, pos}}), [](S x) { return div(x[0], x[1]); }});
  c.push_back({"neg", in({{{5}, sym}}), [](S x) { return neg(x[0]); }});
  c.push_back({"scale", in({{{5}, sym}}), [](S x) { return scale(x[0], -2.5); }});
  c.push_back({"add_scalar", in({{{5}, sym}}), [](S x) { return add_scalar(x[0], 0.7); }});
  c.push_back({"square", in({{{2, 3}, sym}}), [](S x) { return square(x[0]); }});
  c.push_back({"exp", in({{{2, 3}, sym}}), [](S x) { return exp(x[0]); }});
  c.push_back({"log", in({{{2, 3}, pos}}), [](S x) { return log(x[0]); }});
  c.push_back({"tanh", in({{{2, 3}, {-2, 2}}}), [](S x) { return tanh(x[0]); }});
  c.push_back({"sigmoid", in({{{2, 3}, {-3, 3}}}), [](S x) { return sigmoid(x[0]); }});
  c.push_back({"silu", in({{{2, 3}, {-3, 3}}}), [](S x) { return silu(x[0]); }});
  c.push_back({"softplus", in({{{2, 3}, {-3, 3}}}), [](S x) { return softplus(x[0]); }});
  c.push_back({"sum", in({{{3, 4}, sym}}), [](S x) { return sum(x[0], 1); }});
  c.push_back({"sum_keepdim", in({{{3, 4}, sym}}), [](S x) { return sum(x[0], 0, true); }});
  c.push_back({"mean", in({{{3, 4, 2}, sym}}), [](S x) { return mean(x[0], 1); }});
  c.push_back({"max", in({{{3, 4}, sym}}), [](S x) { return max(x[0], 1, true); }});
  c.push_back({"sum_all", in({{{3, 4}, sym}}), [](S x) { return sum_all(x[0]); }});
  c.push_back({"mean_all", in({{{3, 4}, sym}}), [](S x) { return mean_all(x[0]); }});
  c.push_back({"softmax", in({{{3, 4}, {-2, 2}}}), [](S x) { return softmax(x[0], 1); }});
  c.push_back({"softmax_axis0", in({{{3, 4}, {-2, 2}}}), [](S x) { return softmax(x[0], 0); }});
  c.push_back({"cross_entropy", in({{{3, 4}, {-2, 2}}}), [](S x) {
                 const std::size_t labels[] = {2, 0, 3};
                 return cross_entropy_with_softmax(x[0], labels);
               }});
  c.push_back({"matmul", in({{{3, 4}, sym}, {{4, 2}, sym}}), [](S x) { return matmul(x[0], x[1]); }});
  c.push_back({"transpose", in({{{3, 4}, sym}}), [](S x) { return transpose(x[0]); }});
  c.push_back({"linear", in({{{3, 4}, sym}, {{4, 2}, sym}, {{2}, sym}}),
               [](S x) { return linear(x[0], x[1], x[2]); }});
  c.push_back({"reshape", in({{{3, 4}, sym}}), [](S x) { return reshape(x[0], {2, 6}); }});
  c.push_back({"concat", in({{{2, 3}, sym}, {{1, 3}, sym}}), [](S x) { return concat(x, 0); }});
  c.push_back({"concat_axis1", in({{{2, 3}, sym}, {{2, 2}, sym}}), [](S x) { return concat(x, 1); }});
  c.push_back({"slice", in({{{5, 3}, sym}}), [](S x) { return slice(x[0], 0, 1, 4); }});
  c.push_back({"reverse", in({{{4, 3}, sym}}), [](S x) { return reverse(x[0], 0); }});
  c.push_back({"index_select", in({{{4, 3}, sym}}), [](S x) {
                 const std::size_t rows[] = {3, 0, 3, 1};
                 return index_select(x[0], rows);
               }});
  c.push_back({"conv1d_depthwise_causal", in({{{6, 3}, sym}, {{4, 3}, sym}}),
               [](S x) { return conv1d_depthwise_causal(x[0], x[1]); }});
  c.push_back({"conv1d_centered", in({{{6, 2}, sym}, {{5, 2}, sym}}),
               [](S x) { return conv1d_centered(x[0], x[1]); }});
  c.push_back({"adaptive_avg_pool2d", in({{{5, 5, 2}, sym}}),
               [](S x) { return adaptive_avg_pool2d(x[0], 3); }});
  c.push_back({"layer_norm", in({{{3, 5}, sym}, {{5}, pos}, {{5}, sym}}),
               [](S x) { return layer_norm(x[0], x[1], x[2]); }});
  c.push_back({"gather_by_map", in({{{3, 3, 2}, sym}}),
               [](S x) { return scan::gather_by_map(x[0], scan::mcs_map(3, 3)); }});
  c.push_back({"scatter_by_map", in({{{9, 2}, sym}}),
               [](S x) { return scan::scatter_by_map(x[0], scan::mcs_map(3, 2)); }});
  c.push_back({"composite", in({{{4, 3}, sym}, {{3, 3}, sym}, {{3}, pos}}), [](S x) {
                 const Tensor h = silu(linear(x[0], x[1], x[2]));
                 return softmax(mul(tanh(h), sigmoid(layer_norm(h, x[2], x[2]))), 1);
               }});
  return c;
}

std::vector<Case> scan_cases() {
  using S = std::span<const Tensor>;
  std::vector<Case> c;
  for (std::size_t L : {1, 5, 13}) {
    for (auto mode : {ssm::ScanMode::Sequential, ssm::ScanMode::Parallel}) {
      const std::size_t D = 3, N = 4;
      c.push_back({"selective_scan/" + std::string(ssm::scan_mode_name(mode)) + "/L" + std::to_string(L),
                   [=](std::mt19937_64& rng) {
                     return std::vector<Tensor>{uniform({L, D}, -1, 1, rng), uniform({L, D}, 0.05, 1.0, rng),
                                                uniform({D, N}, -2.0, -0.2, rng), uniform({L, N}, -1, 1, rng),
                                                uniform({L, N}, -1, 1, rng), uniform({D}, -1, 1, rng)};
                   },
                   [mode](S x) { return ssm::selective_scan(x[0], x[1], x[2], x[3], x[4], x[5], mode); }});
    }
  }
  for (auto mode : {ssm::ScanMode::Sequential, ssm::ScanMode::Parallel}) {
    c.push_back({"mamba_block/" + std::string(ssm::scan_mode_name(mode)),
                 [](std::mt19937_64& rng) {
                   auto p = ssm::init_ssm_params(3, 4, 3, rng);
                   std::vector<Tensor> out{uniform({6, 3}, -1, 1, rng)};
                   p.visit("", [&](const std::string&, Tensor& t) { out.push_back(t); });
                   return out;
                 },
                 [mode](S x) {
                   ssm::SsmParams p{x[1], x[2], x[3], x[4], x[5], x[6], x[7]};
                   return ssm::mamba_block(x[0], p, mode);
                 }});
  }
  return c;
}

SuiteResult make_suite(std::string name, double tolerance) {
  SuiteResult s;
  s.name = std::move(name);
  s.tolerance = tolerance;
  return s;
}

void run_cases(SuiteResult& suite, const std::vector<Case>& cases, std::size_t repeats,
               std::uint64_t seed) {
  for (const auto& k : cases) {
    for (std::size_t r = 0; r < repeats; ++r) {
      std::mt19937_64 rng(seed + 1000 * r);
      const auto inputs = k.inputs(rng);
      const std::uint64_t weight_seed = seed + r;
      const LossFn loss = [&](std::span<const Tensor> x) { return weighted(k.op(x), weight_seed); };
      const auto rep = check_gradients(k.name, loss, inputs, suite.tolerance);
      suite.max_rel_error = std::max(suite.max_rel_error, rep.max_rel_error);
      ++suite.checks;
      if (!rep.passed) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s (draw %zu): max relative error %.3e", k.name.c_str(), r,
                      rep.max_rel_error);
        suite.failures.emplace_back(buf);
      }
    }
  }
}

SuiteResult model_suite(std::size_t repeats) {
  SuiteResult suite = make_suite("full-model", kModelTolerance);
  model::MimConfig cfg;
  cfg.patch = 3;
  cfg.bands = 4;
  cfg.embed = 4;
  cfg.hidden = 4;
  cfg.states = 4;
  cfg.classes = 2;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto params = model::init_mim_params(cfg, 11 + r);
    std::mt19937_64 rng(101 + r);
    std::vector<Tensor> inputs{uniform({3, 3, 4}, -1, 1, rng)};
    params.visit([&](const std::string&, Tensor& t) { inputs.push_back(t); });
    const std::size_t label = r % cfg.classes;
    const LossFn loss = [&](std::span<const Tensor> x) {
      auto p = params;
      std::size_t i = 1;
      p.visit([&](const std::string&, Tensor& t) { t = x[i++]; });
      const model::MimModel net(cfg, std::move(p));
      return model::multiscale_loss(net.forward(x[0]).logits, label);
    };
    const auto rep = check_gradients("full-model", loss, inputs, suite.tolerance);
    suite.max_rel_error = std::max(suite.max_rel_error, rep.max_rel_error);
    ++suite.checks;
    if (!rep.passed) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "full-model (draw %zu): max relative error %.3e", r, rep.max_rel_error);
      suite.failures.emplace_back(buf);
    }
  }
  return suite;
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suites(const std::string& preset) {
  std::size_t primitive_draws = 0, model_draws = 0;
  if (preset == "tiny") {
    primitive_draws = 3;
    model_draws = 1;
  } else if (preset == "full") {
    primitive_draws = 20;
    model_draws = 3;
  } else {
    throw UsageError("unknown gradcheck preset '" + preset + "' (expected tiny|full)");
  }
  std::vector<SuiteResult> out;
  SuiteResult prim = make_suite("primitives", kPrimitiveTolerance);
  run_cases(prim, primitive_cases(), primitive_draws, 1);
  out.push_back(std::move(prim));
  SuiteResult scan_suite = make_suite("selective-scan", kPrimitiveTolerance);
  run_cases(scan_suite, scan_cases(), primitive_draws, 2);
  out.push_back(std::move(scan_suite));
  out.push_back(model_suite(model_draws));
  return out;
}

}  // namespace mim::cli
