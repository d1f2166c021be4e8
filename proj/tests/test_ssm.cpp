#include <gtest/gtest.h>

#include <cmath>

#include "mim/error.hpp"
#include "mim/gradcheck.hpp"
#include "mim/ops.hpp"
#include "mim/ssm.hpp"
#include "test_support.hpp"

using namespace mim;
using namespace mim::ssm;
using mim::testing::max_rel_diff;
using mim::testing::numeric_gradient;
using mim::testing::random_tensor;

namespace {

// Composite Simpson rule for the integral of exp(a s) over [0, delta].
double simpson_b_coef(double a, double delta, int intervals = 2000) {
  const double h = delta / intervals;
  double acc = 1.0 + std::exp(a * delta);
  for (int k = 1; k < intervals; ++k) acc += (k % 2 ? 4.0 : 2.0) * std::exp(a * k * h);
  return acc * h / 3.0;
}

// Direct loop over h_t = abar_t h_{t-1} + drive_t, kept apart from the library.
std::vector<double> naive_outputs(const DiscreteSystem& s) {
  const std::size_t L = s.steps, D = s.channels, N = s.states;
  std::vector<double> h(D * N, 0.0), y(L * D);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = s.d_skip[d] * s.x[t * D + d];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * D + d) * N + n;
        h[d * N + n] = s.abar[i] * h[d * N + n] + s.drive[i];
        acc += s.c[t * N + n] * h[d * N + n];
      }
      y[t * D + d] = acc;
    }
  return y;
}

DiscreteSystem random_system(std::size_t L, std::size_t D, std::size_t N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> decay(0.05, 0.999), u(-1, 1);
  DiscreteSystem s;
  s.steps = L;
  s.channels = D;
  s.states = N;
  s.abar.resize(L * D * N);
  s.drive.resize(L * D * N);
  for (auto& v : s.abar) v = decay(rng);
  for (auto& v : s.drive) v = u(rng);
  s.c.resize(L * N);
  for (auto& v : s.c) v = u(rng);
  s.d_skip.resize(D);
  for (auto& v : s.d_skip) v = u(rng);
  s.x.resize(L * D);
  for (auto& v : s.x) v = u(rng);
  return s;
}

LtiSystem random_lti(std::size_t D, std::size_t N, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> decay(0.05, 0.99), u(-1, 1);
  LtiSystem s;
  s.channels = D;
  s.states = N;
  s.abar.resize(D * N);
  s.bbar.resize(D * N);
  for (auto& v : s.abar) v = decay(rng);
  for (auto& v : s.bbar) v = u(rng);
  s.c.resize(N);
  for (auto& v : s.c) v = u(rng);
  s.d_skip.resize(D);
  for (auto& v : s.d_skip) v = u(rng);
  return s;
}

}  // namespace

TEST(Zoh, AnalyticHalfDecay) {
  const auto z = zoh(-1.0, std::log(2.0));
  EXPECT_NEAR(z.abar, 0.5, 1e-12);
  EXPECT_NEAR(z.b_coef, 0.5, 1e-12);
  const auto [abar, bbar] = zoh_discretize(Tensor::from_data({2}, {-1, -1}), Tensor::from_data({2}, {3, -4}),
                                           Tensor::from_data({2}, {std::log(2.0), std::log(2.0)}));
  EXPECT_NEAR(abar.data()[0], 0.5, 1e-12);
  EXPECT_NEAR(bbar.data()[0], 1.5, 1e-12);
  EXPECT_NEAR(bbar.data()[1], -2.0, 1e-12);
}

TEST(Zoh, SmallStepLimit) {
  const auto z = zoh(-3.0, 1e-9);
  EXPECT_NEAR(z.abar, 1.0, 1e-8);
  EXPECT_NEAR(z.b_coef, 1e-9, 1e-15);
}

TEST(Zoh, MatchesSimpsonQuadrature) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> a_dist(-8.0, -0.01), log_delta(std::log(1e-4), std::log(3.0));
  for (int k = 0; k < 50; ++k) {
    const double a = a_dist(rng), delta = std::exp(log_delta(rng));
    const auto z = zoh(a, delta);
    EXPECT_NEAR(z.b_coef, simpson_b_coef(a, delta), 1e-8) << "a " << a << " delta " << delta;
    EXPECT_NEAR(z.abar, std::exp(a * delta), 1e-14);
  }
}

TEST(Zoh, ContinuousAcrossBranchSwitches) {
  for (double threshold : {kZohTaylorThreshold, kZohExpm1Band}) {
    const double a = -2.0;
    const double below = threshold * (1 - 1e-9) / 2.0, above = threshold * (1 + 1e-9) / 2.0;
    const auto lo = zoh(a, below), hi = zoh(a, above);
    EXPECT_NEAR(lo.abar, hi.abar, 1e-9);
    EXPECT_NEAR(lo.b_coef / below, hi.b_coef / above, 1e-9);
  }
}

TEST(Zoh, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> a_dist(-5.0, -0.1), d_dist(0.01, 2.0);
  for (int k = 0; k < 30; ++k) {
    const double a = a_dist(rng), delta = d_dist(rng);
    const auto d = zoh_b_coef_derivatives(a, delta);
    const double h = 1e-6;
    const double fd_delta = (zoh(a, delta + h).b_coef - zoh(a, delta - h).b_coef) / (2 * h);
    const double fd_a = (zoh(a + h, delta).b_coef - zoh(a - h, delta).b_coef) / (2 * h);
    EXPECT_NEAR(d.d_delta, fd_delta, 1e-7);
    EXPECT_NEAR(d.d_a, fd_a, 1e-7);
  }
  const auto tiny = zoh_b_coef_derivatives(-1.0, 1e-8);
  EXPECT_NEAR(tiny.d_delta, 1.0, 1e-7);
  EXPECT_NEAR(tiny.d_a, 0.5e-16, 1e-20);
}

TEST(Zoh, RejectsNonPositiveDelta) {
  EXPECT_THROW(zoh(-1.0, 0.0), NumericError);
  EXPECT_THROW(zoh(-1.0, -0.5), NumericError);
  EXPECT_THROW(zoh(-1.0, std::nan("")), NumericError);
}

TEST(Zoh, StableForNegativeA) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> a_dist(-50.0, -1e-3), d_dist(1e-5, 5.0);
  for (int k = 0; k < 1000; ++k) {
    const auto z = zoh(a_dist(rng), d_dist(rng));
    EXPECT_GE(z.abar, 0.0);
    EXPECT_LT(z.abar, 1.0);
    EXPECT_GT(z.b_coef, 0.0);
  }
}

TEST(ScanElementAlgebra, CombineIsAssociative) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int k = 0; k < 1000; ++k) {
    const ScanElement e1{u(rng), u(rng)}, e2{u(rng), u(rng)}, e3{u(rng), u(rng)};
    const auto left = combine(combine(e1, e2), e3), right = combine(e1, combine(e2, e3));
    EXPECT_NEAR(left.a, right.a, 1e-12);
    EXPECT_NEAR(left.b, right.b, 1e-12);
  }
}

TEST(ScanElementAlgebra, BlellochMatchesRunningFold) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t len : {0u, 1u, 2u, 3u, 7u, 8u, 13u, 41u, 100u}) {
    std::vector<ScanElement> v(len);
    for (auto& e : v) e = {u(rng), u(rng)};
    auto scanned = v;
    inclusive_scan_blelloch(scanned);
    ScanElement acc;
    for (std::size_t k = 0; k < len; ++k) {
      acc = combine(acc, v[k]);
      EXPECT_NEAR(scanned[k].a, acc.a, 1e-12);
      EXPECT_NEAR(scanned[k].b, acc.b, 1e-12);
    }
  }
}

TEST(Recurrence, UnitDecayGivesPrefixSums) {
  DiscreteSystem s;
  s.steps = 10;
  s.channels = 1;
  s.states = 1;
  s.abar.assign(10, 1.0);
  s.drive.assign(10, 1.0);
  s.c.assign(10, 1.0);
  s.d_skip = {0.0};
  s.x.assign(10, 0.0);
  for (auto mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    const auto y = run_system(s, mode);
    for (std::size_t t = 0; t < 10; ++t) EXPECT_DOUBLE_EQ(y[t], double(t + 1));
  }
}

TEST(Recurrence, ImpulseResponse) {
  const double a = 0.7, b = 1.3, c = -0.4;
  LtiSystem lti{1, 1, {a}, {b}, {c}, {0.0}};
  const std::vector<double> x{1, 0, 0};
  const auto sys = lti_as_discrete(x, 3, lti);
  const std::vector<double> want{c * b, c * a * b, c * a * a * b};
  for (auto mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    const auto y = run_system(sys, mode);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(y[t], want[t], 1e-15);
  }
  const auto conv = ssm_kernel_conv(x, 3, lti);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(conv[t], want[t], 1e-15);
}

TEST(Recurrence, ParallelMatchesSequential) {
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> len(2, 257);
  for (int k = 0; k < 100; ++k) {
    std::size_t L = len(rng);
    if (k == 0) L = 13;
    if (k == 1) L = 41;
    if (k == 2) L = 257;
    const std::size_t D = k % 2 ? 4 : 1, N = k % 4 < 2 ? 1 : 16;
    const auto sys = random_system(L, D, N, rng);
    const auto seq = run_system(sys, ScanMode::Sequential);
    const auto par = run_system(sys, ScanMode::Parallel);
    EXPECT_LE(max_rel_diff(seq, par, 1e-12), 1e-10) << "L " << L << " D " << D << " N " << N;
    EXPECT_LE(max_rel_diff(seq, naive_outputs(sys), 1e-12), 1e-12);
  }
}

TEST(Recurrence, RejectsInconsistentBuffers) {
  std::mt19937_64 rng(17);
  auto sys = random_system(5, 2, 3, rng);
  sys.c.pop_back();
  EXPECT_THROW(run_system(sys, ScanMode::Sequential), ShapeError);
}

TEST(LtiKernel, MemorylessWhenDecayIsZero) {
  LtiSystem lti{2, 2, {0, 0, 0, 0}, {1, 2, 3, 4}, {0.5, -1}, {0, 0}};
  const auto k = lti_kernel(lti, 4);
  EXPECT_NEAR(k[0 * 2 + 0], 0.5 * 1 - 1 * 2, 1e-15);
  EXPECT_NEAR(k[0 * 2 + 1], 0.5 * 3 - 1 * 4, 1e-15);
  for (std::size_t t = 1; t < 4; ++t) {
    EXPECT_EQ(k[t * 2 + 0], 0.0);
    EXPECT_EQ(k[t * 2 + 1], 0.0);
  }
}

TEST(LtiKernel, ImpulseRecoversKernel) {
  std::mt19937_64 rng(18);
  auto lti = random_lti(3, 4, rng);
  lti.d_skip.assign(3, 0.0);
  const std::size_t L = 12;
  std::vector<double> x(L * 3, 0.0);
  for (std::size_t d = 0; d < 3; ++d) x[d] = 1.0;
  const auto y = ssm_kernel_conv(x, L, lti);
  const auto k = lti_kernel(lti, L);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], k[i], 1e-14);
}

TEST(LtiKernel, ConvolutionMatchesRecurrence) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 20; ++k) {
    const std::size_t D = 1 + k % 4, N = 1 + k % 5, L = 10 + 3 * k;
    const auto lti = random_lti(D, N, rng);
    std::vector<double> x(L * D);
    for (auto& v : x) v = u(rng);
    const auto conv = ssm_kernel_conv(x, L, lti);
    const auto rec = naive_outputs(lti_as_discrete(x, L, lti));
    EXPECT_LE(max_rel_diff(conv, rec, 1e-12), 1e-9);
  }
}

TEST(SelectiveScan, SingleStep) {
  const double a = -0.8, dt = 0.3, b = 0.6, c = 1.7, skip = 0.25, x = -1.2;
  const auto y = selective_scan(Tensor::from_data({1, 1}, {x}), Tensor::from_data({1, 1}, {dt}),
                                Tensor::from_data({1, 1}, {a}), Tensor::from_data({1, 1}, {b}),
                                Tensor::from_data({1, 1}, {c}), Tensor::from_data({1}, {skip}),
                                ScanMode::Sequential);
  const double bbar = (std::exp(a * dt) - 1) / a * b;
  EXPECT_NEAR(y.item(), c * bbar * x + skip * x, 1e-14);
}

TEST(SelectiveScan, FrozenParametersMatchKernelConvolution) {
  std::mt19937_64 rng(20);
  const std::size_t L = 64, D = 3, N = 4;
  std::uniform_real_distribution<double> u(-1, 1), a_dist(-2.0, -0.2), d_dist(0.05, 1.0);
  std::vector<double> a(D * N), delta_row(D), b_row(N), c_row(N), skip(D), x(L * D);
  for (auto& v : a) v = a_dist(rng);
  for (auto& v : delta_row) v = d_dist(rng);
  for (auto& v : b_row) v = u(rng);
  for (auto& v : c_row) v = u(rng);
  for (auto& v : skip) v = u(rng);
  for (auto& v : x) v = u(rng);
  std::vector<double> delta(L * D), b(L * N), c(L * N);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) delta[t * D + d] = delta_row[d];
    for (std::size_t n = 0; n < N; ++n) {
      b[t * N + n] = b_row[n];
      c[t * N + n] = c_row[n];
    }
  }
  LtiSystem lti{D, N, std::vector<double>(D * N), std::vector<double>(D * N), c_row, skip};
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) {
      const double an = a[d * N + n], e = std::exp(an * delta_row[d]);
      lti.abar[d * N + n] = e;
      lti.bbar[d * N + n] = (e - 1) / an * b_row[n];
    }
  const auto want = ssm_kernel_conv(x, L, lti);
  for (auto mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    const auto y = selective_scan(Tensor::from_data({L, D}, x), Tensor::from_data({L, D}, delta),
                                  Tensor::from_data({D, N}, a), Tensor::from_data({L, N}, b),
                                  Tensor::from_data({L, N}, c), Tensor::from_data({D}, skip), mode);
    EXPECT_LE(max_rel_diff(y.to_vector(), want, 1e-12), 1e-9);
  }
}

TEST(SelectiveScan, GradientsMatchFiniteDifferences) {
  for (auto mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(100 + seed);
      const std::size_t L = 7, D = 3, N = 4;
      std::vector<Tensor> in{random_tensor({L, D}, rng), random_tensor({L, D}, rng, 0.05, 1.0),
                             random_tensor({D, N}, rng, -2.0, -0.2), random_tensor({L, N}, rng),
                             random_tensor({L, N}, rng), random_tensor({D}, rng)};
      std::vector<double> dir(L * D);
      std::uniform_real_distribution<double> u(-1, 1);
      for (auto& v : dir) v = u(rng);
      const auto weights = Tensor::from_data({L, D}, dir);
      auto scan_of = [&](const std::vector<Tensor>& t) {
        return selective_scan(t[0], t[1], t[2], t[3], t[4], t[5], mode);
      };
      const auto analytic = grad(sum_all(mul(scan_of(in), weights)), in);
      for (std::size_t k = 0; k < in.size(); ++k) {
        auto f = [&](const std::vector<double>& values) {
          NoGradGuard guard;
          auto moved = in;
          moved[k] = Tensor::from_data(in[k].shape(), values);
          const auto out = scan_of(moved);
          const auto y = out.data();
          double s = 0;
          for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * dir[i];
          return s;
        };
        EXPECT_LT(max_rel_diff(analytic[k].to_vector(), numeric_gradient(f, in[k].to_vector())), 1e-4)
            << "input " << k << " seed " << seed;
      }
    }
  }
}

TEST(SelectiveScan, RejectsBadInputs) {
  const auto x = Tensor::zeros({3, 2});
  const auto a = Tensor::full({2, 2}, -1.0);
  const auto bc = Tensor::zeros({3, 2});
  const auto skip = Tensor::zeros({2});
  EXPECT_THROW(selective_scan(x, Tensor::zeros({3, 2}), a, bc, bc, skip, ScanMode::Sequential), NumericError);
  EXPECT_THROW(selective_scan(x, Tensor::full({3, 3}, 0.1), a, bc, bc, skip, ScanMode::Sequential), ShapeError);
}

TEST(S6, InitialParameters) {
  std::mt19937_64 rng(21);
  const auto p = init_ssm_params(6, 5, 4, rng);
  EXPECT_EQ(p.channels(), 6u);
  EXPECT_EQ(p.states(), 5u);
  EXPECT_EQ(p.conv_taps.shape(), (Shape{4, 6}));
  const auto a = state_matrix(p);
  for (std::size_t d = 0; d < 6; ++d)
    for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(a.at({d, n}), -double(n + 1), 1e-12);
  for (double b : p.delta_bias.data()) {
    const double dt = std::log1p(std::exp(b));
    EXPECT_GE(dt, 1e-3 * (1 - 1e-9));
    EXPECT_LE(dt, 1e-1 * (1 + 1e-9));
  }
  for (double s : p.d_skip.data()) EXPECT_EQ(s, 1.0);
}

TEST(S6, ZeroInputProjection) {
  std::mt19937_64 rng(22);
  auto p = init_ssm_params(3, 4, 4, rng);
  p.delta_bias = Tensor::zeros({3}, true);
  const auto proj = s6_project(Tensor::zeros({5, 3}), p);
  for (double v : proj.delta.data()) EXPECT_NEAR(v, std::log(2.0), 1e-15);
  for (double v : proj.b.data()) EXPECT_EQ(v, 0.0);
  for (double v : proj.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(S6, DeltaPositiveOverRandomInputs) {
  std::mt19937_64 rng(23);
  const auto p = init_ssm_params(4, 3, 4, rng);
  for (int k = 0; k < 1000; ++k) {
    const auto proj = s6_project(random_tensor({2, 4}, rng, -20, 20, false), p);
    for (double v : proj.delta.data()) EXPECT_GT(v, 0.0);
  }
}

TEST(S6, ParallelAndSequentialAgree) {
  std::mt19937_64 rng(24);
  const auto p = init_ssm_params(4, 8, 4, rng);
  for (std::size_t L : {1u, 13u, 41u, 100u}) {
    const auto x = random_tensor({L, 4}, rng, -1, 1, false);
    const auto seq = selective_scan_sequential(x, p).to_vector();
    const auto par = selective_scan_parallel(x, p).to_vector();
    EXPECT_LE(max_rel_diff(seq, par, 1e-12), 1e-10);
  }
}

TEST(S6, BlockGradientsPass) {
  std::mt19937_64 rng(25);
  auto p = init_ssm_params(3, 4, 4, rng);
  const auto x = random_tensor({6, 3}, rng);
  std::vector<Tensor> params{x};
  p.visit("", [&](const std::string&, Tensor& t) { params.push_back(t); });
  auto rebuild = [&](std::span<const Tensor> t) {
    SsmParams q;
    std::size_t i = 1;
    q.a_log = t[i++];
    q.proj_b = t[i++];
    q.proj_c = t[i++];
    q.proj_delta = t[i++];
    q.delta_bias = t[i++];
    q.d_skip = t[i++];
    q.conv_taps = t[i++];
    return q;
  };
  for (auto mode : {ScanMode::Sequential, ScanMode::Parallel}) {
    const auto report = check_gradients(
        "mamba_block", [&](std::span<const Tensor> t) { return sum_all(square(mamba_block(t[0], rebuild(t), mode))); },
        params, 1e-4);
    EXPECT_TRUE(report.passed) << scan_mode_name(mode) << " " << report.max_rel_error;
  }
}
