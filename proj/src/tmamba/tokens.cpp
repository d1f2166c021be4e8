#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/tmamba.hpp"

namespace mim::tmamba {

Tensor seq_attn_weights(const Tensor& seq, const Tensor& taps) {
  if (seq.rank() != 2 || seq.dim(0) == 0) {
    throw ShapeError("seq_attn expects a non-empty [L x C] sequence, got " +
                     shape_str(seq.shape()));
  }
  const Tensor stats[] = {max(seq, 1, true), mean(seq, 1, true)};
  return sigmoid(conv1d_centered(concat(stats, 1), taps));
}

Tensor seq_attn(const Tensor& seq, const Tensor& taps) {
  return mul(seq, seq_attn_weights(seq, taps));
}

Tensor stl_attention(const Tensor& attended, const Tensor& queries) {
  return softmax(transpose(matmul(attended, queries)), 1);
}

Tensor stl(const Tensor& seq, const Tensor& queries, const Tensor& values, const Tensor& taps) {
  const Tensor attended = seq_attn(seq, taps);
  return matmul(stl_attention(attended, queries), matmul(attended, values));
}

Tensor stf(const Tensor& tokens, const Tensor& pooled_z, const Tensor& gate, const Tensor& taps) {
  if (tokens.shape() != pooled_z.shape()) {
    throw ShapeError("stf: tokens " + shape_str(tokens.shape()) + " vs pooled z " +
                     shape_str(pooled_z.shape()));
  }
  const Tensor scores = sigmoid(matmul(pooled_z, gate));
  return add(matmul(scores, tokens), seq_attn(pooled_z, taps));
}

Tensor pool_sequence(const Tensor& seq, const scan::ScanMap& in_map,
                     const scan::ScanMap& out_map) {
  const Tensor grid = scan::scatter_by_map(seq, in_map);
  return scan::gather_by_map(adaptive_avg_pool2d(grid, out_map.side()), out_map);
}

}  // namespace mim::tmamba
