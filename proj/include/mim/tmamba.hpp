#pragma once

// Tokenized Mamba encoder: one scan ordering of a p x p feature patch in,
// a (p-2) x (p-2) token sequence out.
//
//   s, z       = Linear(LayerNorm(S))
//   s_f, s_b   = halves of s ending at the centre step
//   each half  = GDM(S6(silu(conv1d(.))))  stacked `depth` times before GDM
//   merged     = Linear(concat(s_f[0..T-1], (s_f[T]+s_b[T])/2, s_b[T-1..0]))
//   tokens     = STL(merged)                       [p2^2 x C3]
//   fused      = STF(tokens, pool(silu(z)))        [p2^2 x C3]
//   out        = Linear(fused) + Linear(pool(S))   [p2^2 x C2]

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mim/scan.hpp"
#include "mim/ssm.hpp"
#include "mim/tensor.hpp"

namespace mim::tmamba {

/// Where the bidirectional halves are merged relative to STL/STF.
enum class Fusion { PreMerge, PostMerge };

std::string_view fusion_name(Fusion f);
/// Accepts "pre" / "post" (and the long forms "pre-merge" / "post-merge").
Fusion parse_fusion(std::string_view name);

struct Components {
  bool stl = true;
  bool gdm = true;
  bool stf = true;
  friend bool operator==(const Components&, const Components&) = default;
};

struct EncoderShape {
  std::size_t side = 0;        ///< p of the input patch (odd, >= 3)
  std::size_t in_channels = 0; ///< C2
  std::size_t hidden = 0;      ///< C3
  std::size_t states = 16;     ///< N
  std::size_t conv_width = 4;
  std::size_t depth = 2;       ///< stacked S6 blocks per direction
  std::size_t out_side() const { return side - 2; }
};

struct Linear {
  Tensor weight;  ///< [in x out]
  Tensor bias;    ///< [out]
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
Linear init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
Tensor apply(const Linear& l, const Tensor& x);

struct TMambaParams {
  Tensor norm_gamma, norm_beta;  ///< [C2]
  Linear proj_s, proj_z;         ///< C2 -> C3
  std::vector<ssm::SsmParams> forward_blocks, backward_blocks;
  Tensor token_queries;          ///< U1 [C3 x p2^2]
  Tensor token_values;           ///< U2 [C3 x C3]
  Tensor fuse_gate;              ///< Z  [C3 x p2^2]
  Tensor attn_taps;              ///< [7 x 2]
  Linear merge;                  ///< C3 -> C3
  Linear out;                    ///< C3 -> C2
  Linear residual;               ///< C2 -> C2

  template <typename Visitor>
  void visit(const std::string& prefix, Visitor&& v) {
    v(prefix + "norm.gamma", norm_gamma);
    v(prefix + "norm.beta", norm_beta);
    v(prefix + "proj_s.weight", proj_s.weight);
    v(prefix + "proj_s.bias", proj_s.bias);
    v(prefix + "proj_z.weight", proj_z.weight);
    v(prefix + "proj_z.bias", proj_z.bias);
    for (std::size_t i = 0; i < forward_blocks.size(); ++i)
      forward_blocks[i].visit(prefix + "fwd" + std::to_string(i) + ".", v);
    for (std::size_t i = 0; i < backward_blocks.size(); ++i)
      backward_blocks[i].visit(prefix + "bwd" + std::to_string(i) + ".", v);
    v(prefix + "stl.u1", token_queries);
    v(prefix + "stl.u2", token_values);
    v(prefix + "stf.z", fuse_gate);
    v(prefix + "attn.taps", attn_taps);
    v(prefix + "merge.weight", merge.weight);
    v(prefix + "merge.bias", merge.bias);
    v(prefix + "out.weight", out.weight);
    v(prefix + "out.bias", out.bias);
    v(prefix + "residual.weight", residual.weight);
    v(prefix + "residual.bias", residual.bias);
  }
};

inline constexpr std::size_t kAttnWidth = 7;
inline constexpr double kTokenInitStd = 0.02;

TMambaParams init_tmamba_params(const EncoderShape& shape, std::mt19937_64& rng);

struct GdmWeights {
  Tensor w_idx;     ///< [T+1], sums to 1
  Tensor w_fea;     ///< [T+1], sums to 1
  Tensor combined;  ///< [T+1], mean 1
};

struct GdmResult {
  GdmWeights weights;
  Tensor masked;  ///< seq scaled row-wise by `combined`
};

/// Gaussian decay mask of a half sequence whose last step is the centre.
GdmResult gdm(const Tensor& seq);

/// Rebuilds the complete p^2 sequence from the two halves; `merge` is the
/// output linear map (pass an identity to inspect the raw layout).
Tensor merge_cross(const Tensor& fwd, const Tensor& bwd, const Linear& merge);

/// Channel max/mean -> width-7 conv -> sigmoid, applied row-wise to seq.
Tensor seq_attn(const Tensor& seq, const Tensor& taps);
/// Per-step attention weights m [L x 1] used by seq_attn.
Tensor seq_attn_weights(const Tensor& seq, const Tensor& taps);

/// Softmax attention over the length axis: [p2^2 x L].
Tensor stl_attention(const Tensor& attended, const Tensor& queries);
/// Condenses seq [L x C3] into p2^2 tokens.
Tensor stl(const Tensor& seq, const Tensor& queries, const Tensor& values, const Tensor& taps);

/// tokens [p2^2 x C3], pooled_z [p2^2 x C3] (already silu'd and pooled).
Tensor stf(const Tensor& tokens, const Tensor& pooled_z, const Tensor& gate, const Tensor& taps);

/// Spatial adaptive pooling of a sequence laid out by `in_map`, re-read by
/// `out_map`: [p^2 x C] -> [p2^2 x C].
Tensor pool_sequence(const Tensor& seq, const scan::ScanMap& in_map,
                     const scan::ScanMap& out_map);

struct EncoderOptions {
  Components components;
  Fusion fusion = Fusion::PreMerge;
  ssm::ScanMode scan_mode = ssm::ScanMode::Sequential;
};

/// seq [p^2 x C2] ordered by `map` (side p); `out_map` is the same design and
/// type at side p-2. Returns [p2^2 x C2] ordered by `out_map`.
Tensor tmamba_forward(const Tensor& seq, const scan::ScanMap& map, const scan::ScanMap& out_map,
                      const TMambaParams& params, const EncoderOptions& options);

}  // namespace mim::tmamba
