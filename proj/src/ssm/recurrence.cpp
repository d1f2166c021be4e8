#include <string>

#include "mim/error.hpp"
#include "mim/ssm.hpp"

namespace mim::ssm {

namespace {

void validate(const DiscreteSystem& s) {
  const std::size_t ldn = s.steps * s.channels * s.states;
  if (s.steps == 0) throw ShapeError("discrete system needs at least one step");
  if (s.abar.size() != ldn || s.drive.size() != ldn || s.c.size() != s.steps * s.states ||
      s.d_skip.size() != s.channels || s.x.size() != s.steps * s.channels) {
    throw ShapeError("discrete system buffers do not match L x D x N");
  }
}

}  // namespace

std::string_view scan_mode_name(ScanMode m) {
  return m == ScanMode::Sequential ? "sequential" : "parallel";
}

ScanMode parse_scan_mode(std::string_view name) {
  if (name == "sequential") return ScanMode::Sequential;
  if (name == "parallel") return ScanMode::Parallel;
  throw UsageError("unknown scan mode '" + std::string(name) + "' (expected sequential|parallel)");
}

std::vector<double> run_states(const DiscreteSystem& s, ScanMode mode) {
  validate(s);
  const std::size_t L = s.steps, DN = s.channels * s.states;
  std::vector<double> h(L * DN);
  if (mode == ScanMode::Sequential) {
    for (std::size_t j = 0; j < DN; ++j) h[j] = s.drive[j];
    for (std::size_t t = 1; t < L; ++t)
      for (std::size_t j = 0; j < DN; ++j)
        h[t * DN + j] = s.abar[t * DN + j] * h[(t - 1) * DN + j] + s.drive[t * DN + j];
    return h;
  }
  std::vector<ScanElement> lane(L);
  for (std::size_t j = 0; j < DN; ++j) {
    for (std::size_t t = 0; t < L; ++t) lane[t] = {s.abar[t * DN + j], s.drive[t * DN + j]};
    inclusive_scan_blelloch(lane);
    for (std::size_t t = 0; t < L; ++t) h[t * DN + j] = lane[t].b;
  }
  return h;
}

std::vector<double> readout(const DiscreteSystem& s, std::span<const double> h) {
  validate(s);
  const std::size_t L = s.steps, D = s.channels, N = s.states;
  std::vector<double> y(L * D);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = s.d_skip[d] * s.x[t * D + d];
      const double* hs = h.data() + (t * D + d) * N;
      const double* cs = s.c.data() + t * N;
      for (std::size_t n = 0; n < N; ++n) acc += cs[n] * hs[n];
      y[t * D + d] = acc;
    }
  return y;
}

std::vector<double> run_system(const DiscreteSystem& s, ScanMode mode) {
  return readout(s, run_states(s, mode));
}

std::vector<double> lti_kernel(const LtiSystem& sys, std::size_t length) {
  const std::size_t D = sys.channels, N = sys.states;
  std::vector<double> k(length * D, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t n = 0; n < N; ++n) {
      double power = 1.0;  // abar^k
      for (std::size_t step = 0; step < length; ++step) {
        k[step * D + d] += sys.c[n] * power * sys.bbar[d * N + n];
        power *= sys.abar[d * N + n];
      }
    }
  return k;
}

std::vector<double> ssm_kernel_conv(std::span<const double> x, std::size_t steps,
                                    const LtiSystem& sys) {
  const std::size_t D = sys.channels;
  if (x.size() != steps * D) throw ShapeError("ssm_kernel_conv: x must be [L x D]");
  const auto k = lti_kernel(sys, steps);
  std::vector<double> y(steps * D);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = sys.d_skip[d] * x[t * D + d];
      for (std::size_t j = 0; j <= t; ++j) acc += k[j * D + d] * x[(t - j) * D + d];
      y[t * D + d] = acc;
    }
  return y;
}

DiscreteSystem lti_as_discrete(std::span<const double> x, std::size_t steps, const LtiSystem& sys) {
  const std::size_t D = sys.channels, N = sys.states;
  if (x.size() != steps * D) throw ShapeError("lti_as_discrete: x must be [L x D]");
  DiscreteSystem s;
  s.steps = steps;
  s.channels = D;
  s.states = N;
  s.abar.resize(steps * D * N);
  s.drive.resize(steps * D * N);
  s.c.resize(steps * N);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        s.abar[(t * D + d) * N + n] = sys.abar[d * N + n];
        s.drive[(t * D + d) * N + n] = sys.bbar[d * N + n] * x[t * D + d];
      }
    for (std::size_t n = 0; n < N; ++n) s.c[t * N + n] = sys.c[n];
  }
  s.d_skip = sys.d_skip;
  s.x.assign(x.begin(), x.end());
  return s;
}

}  // namespace mim::ssm
