#include <cmath>
#include <memory>

#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/ssm.hpp"

namespace mim::ssm {

namespace {

void check_scan_shapes(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                       const Tensor& c, const Tensor& d_skip) {
  const bool ok = x.rank() == 2 && delta.shape() == x.shape() && a.rank() == 2 &&
                  a.dim(0) == x.dim(1) && b.rank() == 2 && b.dim(0) == x.dim(0) &&
                  b.dim(1) == a.dim(1) && c.shape() == b.shape() && d_skip.rank() == 1 &&
                  d_skip.dim(0) == x.dim(1) && x.dim(0) >= 1;
  if (!ok) {
    throw ShapeError("selective_scan: x " + shape_str(x.shape()) + ", delta " +
                     shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                     shape_str(b.shape()) + ", C " + shape_str(c.shape()) + ", D " +
                     shape_str(d_skip.shape()));
  }
}

// Everything the backward pass needs, computed once in the forward pass.
struct ScanTape {
  std::size_t L = 0, D = 0, N = 0;
  std::vector<double> abar;    // [L x D x N]
  std::vector<double> b_coef;  // [L x D x N]
  std::vector<double> states;  // [L x D x N]
};

}  // namespace

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, ScanMode mode) {
  check_scan_shapes(x, delta, a, b, c, d_skip);
  const std::size_t L = x.dim(0), D = x.dim(1), N = a.dim(1);
  const auto xv = x.data(), dv = delta.data(), av = a.data(), bv = b.data();

  auto tape = std::make_shared<ScanTape>();
  tape->L = L;
  tape->D = D;
  tape->N = N;
  DiscreteSystem sys;
  sys.steps = L;
  sys.channels = D;
  sys.states = N;
  sys.abar.resize(L * D * N);
  sys.drive.resize(L * D * N);
  tape->b_coef.resize(L * D * N);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      const double dt = dv[t * D + d];
      if (!(dt > 0)) throw NumericError("selective_scan: delta must be positive");
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = (t * D + d) * N + n;
        const auto z = zoh(av[d * N + n], dt);
        sys.abar[i] = z.abar;
        tape->b_coef[i] = z.b_coef;
        sys.drive[i] = z.b_coef * bv[t * N + n] * xv[t * D + d];
      }
    }
  sys.c = c.to_vector();
  sys.d_skip = d_skip.to_vector();
  sys.x = x.to_vector();
  tape->states = run_states(sys, mode);
  auto y = readout(sys, tape->states);
  tape->abar = std::move(sys.abar);

  auto backward = [tape, x, delta, a, b, c, d_skip](std::span<const double> gy,
                                                    std::span<const std::span<double>> gin) {
    const std::size_t L = tape->L, D = tape->D, N = tape->N;
    const auto xv = x.data(), dv = delta.data(), av = a.data(), bv = b.data(), cv = c.data(),
               sv = d_skip.data();
    const auto& abar = tape->abar;
    const auto& f = tape->b_coef;
    const auto& h = tape->states;
    auto gx = gin[0], gdelta = gin[1], ga = gin[2], gb = gin[3], gc = gin[4], gskip = gin[5];

    // gh[d,n] carries dLoss/dh_t including the contribution through h_{t+1}.
    std::vector<double> gh(D * N, 0.0);
    for (std::size_t t = L; t-- > 0;) {
      for (std::size_t d = 0; d < D; ++d) {
        const double g = gy[t * D + d];
        const double xt = xv[t * D + d];
        if (!gx.empty()) gx[t * D + d] += sv[d] * g;
        if (!gskip.empty()) gskip[d] += g * xt;
        const double dt = dv[t * D + d];
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = (t * D + d) * N + n;
          double& ght = gh[d * N + n];
          if (t + 1 < L) ght *= abar[i + D * N];
          ght += cv[t * N + n] * g;
          if (!gc.empty()) gc[t * N + n] += g * h[i];

          const double prev = t > 0 ? h[i - D * N] : 0.0;
          const double g_abar = ght * prev;
          const double bxt = bv[t * N + n] * xt;
          const double an = av[d * N + n];
          const auto df = zoh_b_coef_derivatives(an, dt, {abar[i], f[i]});
          if (!gdelta.empty()) gdelta[t * D + d] += g_abar * abar[i] * an + ght * bxt * df.d_delta;
          if (!ga.empty()) ga[d * N + n] += g_abar * abar[i] * dt + ght * bxt * df.d_a;
          if (!gb.empty()) gb[t * N + n] += ght * f[i] * xt;
          if (!gx.empty()) gx[t * D + d] += ght * f[i] * bv[t * N + n];
        }
      }
    }
  };
  return make_result("selective_scan", {L, D}, std::move(y), {x, delta, a, b, c, d_skip},
                     backward);
}

SsmParams init_ssm_params(std::size_t channels, std::size_t states, std::size_t conv_width,
                          std::mt19937_64& rng) {
  if (channels == 0 || states == 0 || conv_width == 0) {
    throw std::invalid_argument("init_ssm_params: extents must be positive");
  }
  SsmParams p;
  std::vector<double> a_log(channels * states);
  for (std::size_t d = 0; d < channels; ++d)
    for (std::size_t n = 0; n < states; ++n) a_log[d * states + n] = std::log(double(n + 1));
  p.a_log = Tensor::from_data({channels, states}, std::move(a_log), true);

  const double bound = 1.0 / std::sqrt(double(channels));
  std::uniform_real_distribution<double> proj(-bound, bound);
  auto uniform_matrix = [&](std::size_t rows, std::size_t cols,
                            std::uniform_real_distribution<double>& dist) {
    std::vector<double> v(rows * cols);
    for (auto& e : v) e = dist(rng);
    return Tensor::from_data({rows, cols}, std::move(v), true);
  };
  p.proj_b = uniform_matrix(channels, states, proj);
  p.proj_c = uniform_matrix(channels, states, proj);
  p.proj_delta = uniform_matrix(channels, 1, proj);

  // softplus(bias) = delta with delta log-uniform in [1e-3, 1e-1].
  std::uniform_real_distribution<double> log_delta(std::log(1e-3), std::log(1e-1));
  std::vector<double> bias(channels);
  for (auto& e : bias) {
    const double dt = std::exp(log_delta(rng));
    e = dt + std::log(-std::expm1(-dt));
  }
  p.delta_bias = Tensor::from_data({channels}, std::move(bias), true);
  p.d_skip = Tensor::full({channels}, 1.0, true);

  const double conv_bound = 1.0 / std::sqrt(double(conv_width));
  std::uniform_real_distribution<double> conv(-conv_bound, conv_bound);
  p.conv_taps = uniform_matrix(conv_width, channels, conv);
  return p;
}

Projection s6_project(const Tensor& x, const SsmParams& params) {
  if (x.rank() != 2 || x.dim(1) != params.channels()) {
    throw ShapeError("s6_project: x " + shape_str(x.shape()) + " for " +
                     std::to_string(params.channels()) + " channels");
  }
  Projection out;
  out.b = matmul(x, params.proj_b);
  out.c = matmul(x, params.proj_c);
  out.delta = softplus(add(matmul(x, params.proj_delta), params.delta_bias));
  return out;
}

Tensor state_matrix(const SsmParams& params) { return neg(exp(params.a_log)); }

Tensor s6_forward(const Tensor& x, const SsmParams& params, ScanMode mode) {
  const auto proj = s6_project(x, params);
  return selective_scan(x, proj.delta, state_matrix(params), proj.b, proj.c, params.d_skip, mode);
}

Tensor selective_scan_sequential(const Tensor& x, const SsmParams& params) {
  return s6_forward(x, params, ScanMode::Sequential);
}

Tensor selective_scan_parallel(const Tensor& x, const SsmParams& params) {
  return s6_forward(x, params, ScanMode::Parallel);
}

Tensor mamba_block(const Tensor& x, const SsmParams& params, ScanMode mode) {
  return s6_forward(silu(conv1d_depthwise_causal(x, params.conv_taps)), params, mode);
}

}  // namespace mim::ssm
