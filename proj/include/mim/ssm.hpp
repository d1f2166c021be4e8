#pragma once

// Discretised state-space recurrences with diagonal A.
//
// A discrete system over L steps, D channels and N states per channel is
//   h[t,d,n] = abar[t,d,n] * h[t-1,d,n] + drive[t,d,n],   h[-1] = 0
//   y[t,d]   = sum_n c[t,n] * h[t,d,n] + d_skip[d] * x[t,d]
// with drive = bbar * x. The selective (S6) variant derives abar and bbar per
// step from input-dependent delta, B and C through zero-order hold.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mim/tensor.hpp"

namespace mim::ssm {

/// Below this |delta * a| the B coefficient uses its Taylor expansion.
inline constexpr double kZohTaylorThreshold = 1e-6;
/// Below this |delta * a| (and above the Taylor threshold) expm1 is used.
inline constexpr double kZohExpm1Band = 0.5;

struct ZohCoefficients {
  double abar = 0;    ///< exp(delta * a)
  double b_coef = 0;  ///< bbar = b_coef * b, i.e. (exp(delta a) - 1) / a
};

/// Scalar zero-order hold for one diagonal entry. Throws NumericError for
/// delta <= 0.
ZohCoefficients zoh(double a, double delta);

/// Partial derivatives of b_coef used by the backward pass.
struct ZohDerivatives {
  double d_delta = 0;
  double d_a = 0;
};
ZohDerivatives zoh_b_coef_derivatives(double a, double delta);
/// Same, reusing coefficients already computed by zoh(a, delta).
ZohDerivatives zoh_b_coef_derivatives(double a, double delta, const ZohCoefficients& z);

/// Elementwise zero-order hold over equal-shaped A, B and delta tensors.
/// Returns {Abar, Bbar}. Not differentiable; used for inspection and tests.
std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta);

/// Associative element of the linear recurrence h = a*h + b.
struct ScanElement {
  double a = 1;
  double b = 0;
};

/// (a1,b1) then (a2,b2): (a1*a2, a2*b1 + b2).
inline ScanElement combine(const ScanElement& first, const ScanElement& second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

/// In-place inclusive prefix scan over `elements` with the Blelloch
/// up-sweep/down-sweep tree (padded to a power of two with identities).
void inclusive_scan_blelloch(std::span<ScanElement> elements);

enum class ScanMode { Sequential, Parallel };

std::string_view scan_mode_name(ScanMode m);
ScanMode parse_scan_mode(std::string_view name);

/// Per-step recurrence inputs, laid out row-major as [L x D x N].
struct DiscreteSystem {
  std::size_t steps = 0, channels = 0, states = 0;
  std::vector<double> abar;   // [L x D x N]
  std::vector<double> drive;  // [L x D x N]
  std::vector<double> c;      // [L x N]
  std::vector<double> d_skip; // [D]
  std::vector<double> x;      // [L x D]
};

/// Hidden states h [L x D x N].
std::vector<double> run_states(const DiscreteSystem& sys, ScanMode mode);
/// y [L x D] from states.
std::vector<double> readout(const DiscreteSystem& sys, std::span<const double> states);
/// run_states + readout.
std::vector<double> run_system(const DiscreteSystem& sys, ScanMode mode);

/// Time-invariant system: abar, bbar [D x N], c [N], d_skip [D].
struct LtiSystem {
  std::size_t channels = 0, states = 0;
  std::vector<double> abar;
  std::vector<double> bbar;
  std::vector<double> c;
  std::vector<double> d_skip;
};

/// Kernel K[k,d] = sum_n c[n] abar[d,n]^k bbar[d,n] for k < length.
std::vector<double> lti_kernel(const LtiSystem& sys, std::size_t length);
/// Causal convolution of x [L x D] with the LTI kernel, plus the skip term.
std::vector<double> ssm_kernel_conv(std::span<const double> x, std::size_t steps,
                                    const LtiSystem& sys);
/// The LTI system unrolled as a DiscreteSystem (for the recurrence route).
DiscreteSystem lti_as_discrete(std::span<const double> x, std::size_t steps, const LtiSystem& sys);

/// Differentiable fused selective scan.
///   x, delta [L x D]; a [D x N] (negative); b, c [L x N]; d_skip [D]
/// Throws NumericError if any delta <= 0.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, ScanMode mode);

/// Learnable parameters of one S6 block over D channels with N states.
struct SsmParams {
  Tensor a_log;       ///< [D x N], A = -exp(a_log)
  Tensor proj_b;      ///< [D x N]
  Tensor proj_c;      ///< [D x N]
  Tensor proj_delta;  ///< [D x 1]
  Tensor delta_bias;  ///< [D]
  Tensor d_skip;      ///< [D]
  Tensor conv_taps;   ///< [K x D], causal depthwise pre-convolution

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t states() const { return a_log.dim(1); }
  template <typename Visitor>
  void visit(const std::string& prefix, Visitor&& v) {
    v(prefix + "a_log", a_log);
    v(prefix + "proj_b", proj_b);
    v(prefix + "proj_c", proj_c);
    v(prefix + "proj_delta", proj_delta);
    v(prefix + "delta_bias", delta_bias);
    v(prefix + "d_skip", d_skip);
    v(prefix + "conv_taps", conv_taps);
  }
};

/// A = -(1..N) per channel, delta initialised in [1e-3, 1e-1], D_skip = 1.
SsmParams init_ssm_params(std::size_t channels, std::size_t states, std::size_t conv_width,
                          std::mt19937_64& rng);

struct Projection {
  Tensor b;      ///< [L x N]
  Tensor c;      ///< [L x N]
  Tensor delta;  ///< [L x D], softplus(delta_bias + x proj_delta)
};

Projection s6_project(const Tensor& x, const SsmParams& params);

/// A = -exp(a_log).
Tensor state_matrix(const SsmParams& params);

/// Projection + scan: y [L x D].
Tensor selective_scan_sequential(const Tensor& x, const SsmParams& params);
Tensor selective_scan_parallel(const Tensor& x, const SsmParams& params);
Tensor s6_forward(const Tensor& x, const SsmParams& params, ScanMode mode);

/// silu(conv1d(x)) followed by the S6 scan.
Tensor mamba_block(const Tensor& x, const SsmParams& params, ScanMode mode);

}  // namespace mim::ssm
