#pragma once

// Differentiable primitives. Binary elementwise operations broadcast
// numpy-style: shapes are right-aligned and each extent must match or be 1.

#include <cstddef>
#include <span>
#include <vector>

#include "mim/tensor.hpp"

namespace mim {

// Elementwise binary.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Elementwise unary.
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// log(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& x);

// Reductions. `keepdim` keeps the reduced axis with extent 1.
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Maximum along an axis; the gradient goes to the first maximal entry.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Mean over rows of -log softmax(logits)[label]. `logits` is [B x K] or [K].
Tensor cross_entropy_with_softmax(const Tensor& logits, std::span<const std::size_t> labels);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor transpose(const Tensor& a);                // 2-D only
/// x[L x in] * w[in x out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Shape and indexing.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reverse(const Tensor& x, std::size_t axis);
/// Rows (slabs along axis 0) picked by index; repeated indices allowed.
Tensor index_select(const Tensor& x, std::span<const std::size_t> rows);

// Sequence and grid operators.

/// out[t,d] = sum_k taps[k,d] * seq[t-K+1+k, d], zero outside the sequence.
Tensor conv1d_depthwise_causal(const Tensor& seq, const Tensor& taps);
/// Cross-channel 1-D convolution to a single output channel, odd width,
/// symmetric zero padding: out[t] = sum_{k,c} w[k,c] * seq[t-(K-1)/2+k, c].
Tensor conv1d_centered(const Tensor& seq, const Tensor& weight);
/// [p x p x D] -> [q x q x D]; cell (i,j) averages rows
/// [floor(i*p/q), ceil((i+1)*p/q)) and the same column window. p, q odd.
Tensor adaptive_avg_pool2d(const Tensor& grid, std::size_t out_side);
/// Pooling window [begin, end) used by adaptive_avg_pool2d along one axis.
std::pair<std::size_t, std::size_t> pool_window(std::size_t i, std::size_t in_side,
                                                std::size_t out_side);
/// Normalisation over the last axis of [L x D] with affine gamma/beta [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

namespace testing_hooks {
/// Negative control for gradient checks: when set, silu's backward is
/// deliberately wrong by 10%.
void set_corrupt_silu_backward(bool on);
bool corrupt_silu_backward();
}  // namespace testing_hooks

}  // namespace mim
