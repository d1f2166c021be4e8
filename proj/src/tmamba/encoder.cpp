#include <cmath>
#include <stdexcept>

#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/tmamba.hpp"

namespace mim::tmamba {

std::string_view fusion_name(Fusion f) { return f == Fusion::PreMerge ? "pre" : "post"; }

Fusion parse_fusion(std::string_view name) {
  if (name == "pre" || name == "pre-merge") return Fusion::PreMerge;
  if (name == "post" || name == "post-merge") return Fusion::PostMerge;
  throw UsageError("unknown fusion strategy '" + std::string(name) + "' (expected pre|post)");
}

Linear init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out), b(out);
  for (auto& e : w) e = dist(rng);
  for (auto& e : b) e = dist(rng);
  return {Tensor::from_data({in, out}, std::move(w), true),
          Tensor::from_data({out}, std::move(b), true)};
}

Tensor apply(const Linear& l, const Tensor& x) { return linear(x, l.weight, l.bias); }

namespace {

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

// Averages the cells covered by one half only; windows without any of its
// cells yield zero.
Tensor masked_pool(const Tensor& half, std::span<const std::size_t> positions,
                   const scan::ScanMap& map, const scan::ScanMap& out_map) {
  const std::size_t p = map.side(), q = out_map.side(), C = half.dim(1);
  const std::size_t absent = half.dim(0);
  std::vector<std::size_t> rows(p * p, absent);
  std::vector<double> covered(p * p, 0.0);
  const auto flat = map.flat_order();
  for (std::size_t k = 0; k < positions.size(); ++k) {
    rows[flat[positions[k]]] = k;
    covered[flat[positions[k]]] = 1.0;
  }
  const Tensor padded_parts[] = {half, Tensor::zeros({1, C})};
  const Tensor grid = reshape(index_select(concat(padded_parts, 0), rows), {p, p, C});
  const Tensor pooled = adaptive_avg_pool2d(grid, q);

  std::vector<double> factor(q * q, 0.0);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const auto [r0, r1] = pool_window(i, p, q);
      const auto [c0, c1] = pool_window(j, p, q);
      double count = 0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) count += covered[r * p + c];
      const double area = static_cast<double>((r1 - r0) * (c1 - c0));
      factor[i * q + j] = count > 0 ? area / count : 0.0;
    }
  const Tensor rescaled = mul(pooled, Tensor::from_data({q, q, 1}, std::move(factor)));
  return scan::gather_by_map(rescaled, out_map);
}

Tensor run_branch(Tensor x, const std::vector<ssm::SsmParams>& blocks,
                  const EncoderOptions& options) {
  for (const auto& block : blocks) x = ssm::mamba_block(x, block, options.scan_mode);
  return options.components.gdm ? gdm(x).masked : x;
}

}  // namespace

TMambaParams init_tmamba_params(const EncoderShape& shape, std::mt19937_64& rng) {
  if (shape.side < 3 || shape.side % 2 == 0) {
    throw std::invalid_argument("T-Mamba encoder needs an odd patch side >= 3");
  }
  if (shape.depth == 0) throw std::invalid_argument("T-Mamba encoder depth must be >= 1");
  const std::size_t C2 = shape.in_channels, C3 = shape.hidden;
  const std::size_t tokens = shape.out_side() * shape.out_side();
  TMambaParams p;
  p.norm_gamma = Tensor::full({C2}, 1.0, true);
  p.norm_beta = Tensor::zeros({C2}, true);
  p.proj_s = init_linear(C2, C3, rng);
  p.proj_z = init_linear(C2, C3, rng);
  for (std::size_t i = 0; i < shape.depth; ++i)
    p.forward_blocks.push_back(ssm::init_ssm_params(C3, shape.states, shape.conv_width, rng));
  for (std::size_t i = 0; i < shape.depth; ++i)
    p.backward_blocks.push_back(ssm::init_ssm_params(C3, shape.states, shape.conv_width, rng));
  p.token_queries = gaussian({C3, tokens}, kTokenInitStd, rng);
  p.token_values = gaussian({C3, C3}, kTokenInitStd, rng);
  p.fuse_gate = gaussian({C3, tokens}, kTokenInitStd, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * kAttnWidth));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> taps(kAttnWidth * 2);
  for (auto& e : taps) e = dist(rng);
  p.attn_taps = Tensor::from_data({kAttnWidth, 2}, std::move(taps), true);
  p.merge = init_linear(C3, C3, rng);
  p.out = init_linear(C3, C2, rng);
  p.residual = init_linear(C2, C2, rng);
  return p;
}

Tensor tmamba_forward(const Tensor& seq, const scan::ScanMap& map, const scan::ScanMap& out_map,
                      const TMambaParams& params, const EncoderOptions& options) {
  const std::size_t p = map.side();
  if (p < 3 || out_map.side() + 2 != p) {
    throw ShapeError("tmamba_forward: scan sides " + std::to_string(p) + " -> " +
                     std::to_string(out_map.side()) + " must reduce by 2 from >= 3");
  }
  if (seq.rank() != 2 || seq.dim(0) != p * p || seq.dim(1) != params.norm_gamma.dim(0)) {
    throw ShapeError("tmamba_forward: sequence " + shape_str(seq.shape()) + " for side " +
                     std::to_string(p));
  }
  const Tensor normed = layer_norm(seq, params.norm_gamma, params.norm_beta);
  const Tensor s = apply(params.proj_s, normed);
  const Tensor z = apply(params.proj_z, normed);
  const Tensor pooled_z = pool_sequence(silu(z), map, out_map);

  const auto halves = scan::split_indices(p * p);
  const Tensor fwd = run_branch(index_select(s, halves.forward), params.forward_blocks, options);
  const Tensor bwd = run_branch(index_select(s, halves.backward), params.backward_blocks, options);

  const auto& c = options.components;
  auto fuse = [&](const Tensor& tokens) {
    return c.stf ? stf(tokens, pooled_z, params.fuse_gate, params.attn_taps)
                 : add(tokens, pooled_z);
  };

  Tensor fused;
  if (options.fusion == Fusion::PreMerge) {
    const Tensor merged = merge_cross(fwd, bwd, params.merge);
    fused = fuse(c.stl ? stl(merged, params.token_queries, params.token_values, params.attn_taps)
                       : pool_sequence(merged, map, out_map));
  } else {
    auto tokens_of = [&](const Tensor& half, std::span<const std::size_t> positions) {
      return c.stl ? stl(half, params.token_queries, params.token_values, params.attn_taps)
                   : masked_pool(half, positions, map, out_map);
    };
    const Tensor f = fuse(tokens_of(fwd, halves.forward));
    const Tensor b = fuse(tokens_of(bwd, halves.backward));
    fused = apply(params.merge, scale(add(f, b), 0.5));
  }
  return add(apply(params.out, fused), apply(params.residual, pool_sequence(seq, map, out_map)));
}

}  // namespace mim::tmamba
