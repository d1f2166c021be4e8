#include <stdexcept>

#include "mim/error.hpp"
#include "mim/model.hpp"
#include "mim/ops.hpp"

namespace mim::model {

std::string_view cascade_name(Cascade c) { return c == Cascade::Fused ? "fused" : "branch"; }

Cascade parse_cascade(std::string_view name) {
  if (name == "fused") return Cascade::Fused;
  if (name == "branch") return Cascade::Branch;
  throw UsageError("unknown cascade mode '" + std::string(name) + "' (expected fused|branch)");
}

void MimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (patch < 3 || patch % 2 == 0) fail("patch must be odd and >= 3");
  if (bands == 0 || embed == 0 || hidden == 0 || states == 0) fail("extents must be positive");
  if (conv_width == 0) fail("conv_width must be >= 1");
  if (depth == 0) fail("depth must be >= 1");
  if (classes < 2) fail("need at least 2 classes");
  if (scan_types < 1 || scan_types > 4) fail("scan_types must be 1..4");
}

std::vector<Tensor> MimParams::tensors() {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<std::string> MimParams::names() {
  std::vector<std::string> out;
  visit([&](const std::string& n, Tensor&) { out.push_back(n); });
  return out;
}

MimParams init_mim_params(const MimConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  MimParams p;
  p.embed = tmamba::init_linear(config.bands, config.embed, rng);
  for (std::size_t l = 0; l < config.layers(); ++l) {
    tmamba::EncoderShape shape;
    shape.side = config.patch - 2 * l;
    shape.in_channels = config.embed;
    shape.hidden = config.hidden;
    shape.states = config.states;
    shape.conv_width = config.conv_width;
    shape.depth = config.depth;
    LayerParams layer;
    for (std::size_t m = 0; m < config.scan_types; ++m)
      layer.encoders.push_back(tmamba::init_tmamba_params(shape, rng));
    layer.fusion_logits = Tensor::zeros({config.scan_types}, true);
    p.layers.push_back(std::move(layer));
  }
  for (std::size_t s = 0; s < config.layers(); ++s) {
    HeadParams h;
    h.hidden = tmamba::init_linear(config.embed, config.embed, rng);
    h.out = tmamba::init_linear(config.embed, config.classes, rng);
    p.heads.push_back(std::move(h));
  }
  return p;
}

ScanPlan make_scan_plan(const MimConfig& config) {
  ScanPlan plan;
  for (std::size_t l = 0; l < config.layers(); ++l) {
    const std::size_t side = config.patch - 2 * l;
    std::vector<scan::ScanMap> maps, outs;
    for (std::size_t m = 0; m < config.scan_types; ++m) {
      const int type = static_cast<int>(m) + 1;
      maps.push_back(scan::make_scan_map(side, config.design, type));
      outs.push_back(scan::make_scan_map(side - 2, config.design, type));
    }
    plan.maps.push_back(std::move(maps));
    plan.out_maps.push_back(std::move(outs));
  }
  return plan;
}

Tensor pixel_embed(const Tensor& patch, const tmamba::Linear& embed) {
  if (patch.rank() != 3 || patch.dim(0) != patch.dim(1) ||
      patch.dim(2) != embed.weight.dim(0)) {
    throw ShapeError("pixel_embed: patch " + shape_str(patch.shape()) + " for " +
                     std::to_string(embed.weight.dim(0)) + " bands");
  }
  const std::size_t p = patch.dim(0);
  const Tensor flat = reshape(patch, {p * p, patch.dim(2)});
  return reshape(tmamba::apply(embed, flat), {p, p, embed.weight.dim(1)});
}

Tensor fusion_weights(const Tensor& logits) { return softmax(logits, 0); }

LayerOutput mim_layer(std::span<const Tensor> inputs, const LayerParams& params,
                      std::span<const scan::ScanMap> maps, std::span<const scan::ScanMap> out_maps,
                      const tmamba::EncoderOptions& options) {
  const std::size_t types = params.encoders.size();
  if (maps.size() != types || out_maps.size() != types ||
      (inputs.size() != 1 && inputs.size() != types)) {
    throw ShapeError("mim_layer: inconsistent number of scan types");
  }
  LayerOutput out;
  const Tensor k = fusion_weights(params.fusion_logits);
  for (std::size_t m = 0; m < types; ++m) {
    const Tensor& grid = inputs.size() == 1 ? inputs[0] : inputs[m];
    const Tensor seq = scan::gather_by_map(grid, maps[m]);
    const Tensor encoded =
        tanh(tmamba::tmamba_forward(seq, maps[m], out_maps[m], params.encoders[m], options));
    out.branches.push_back(scan::scatter_by_map(encoded, out_maps[m]));
    const Tensor weighted = mul(out.branches.back(), slice(k, 0, m, m + 1));
    out.fused = out.fused.defined() ? add(out.fused, weighted) : weighted;
  }
  return out;
}

Tensor decode_scale(const Tensor& scale_feature, const HeadParams& head) {
  if (scale_feature.rank() != 3) {
    throw ShapeError("decode_scale expects [q x q x C], got " + shape_str(scale_feature.shape()));
  }
  const std::size_t q = scale_feature.dim(0), C = scale_feature.dim(2);
  const Tensor pooled = mean(reshape(scale_feature, {q * q, C}), 0, true);
  const Tensor hidden = silu(tmamba::apply(head.hidden, tanh(pooled)));
  const Tensor logits = tmamba::apply(head.out, hidden);
  return reshape(logits, {logits.numel()});
}

Tensor multiscale_loss(std::span<const Tensor> scale_logits, std::size_t label) {
  if (scale_logits.empty()) throw std::invalid_argument("multiscale_loss: no scales");
  const std::size_t labels[] = {label};
  Tensor total;
  for (const auto& logits : scale_logits) {
    if (label >= logits.numel()) {
      throw std::invalid_argument("multiscale_loss: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(logits.numel()) +
                                  " classes");
    }
    const Tensor ce = cross_entropy_with_softmax(logits, labels);
    total = total.defined() ? add(total, ce) : ce;
  }
  return scale(total, 1.0 / static_cast<double>(scale_logits.size()));
}

MimModel::MimModel(MimConfig config, MimParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  plan_ = make_scan_plan(config_);
  if (params_.layers.size() != config_.layers() || params_.heads.size() != config_.layers()) {
    throw std::invalid_argument("model parameters do not match the configured layer count");
  }
}

MimModel::MimModel(const MimConfig& config, std::uint64_t seed)
    : MimModel(config, init_mim_params(config, seed)) {}

ForwardResult MimModel::forward(const Tensor& patch) const {
  if (patch.rank() != 3 || patch.dim(0) != config_.patch || patch.dim(1) != config_.patch ||
      patch.dim(2) != config_.bands) {
    throw ShapeError("model expects a [" + std::to_string(config_.patch) + " x " +
                     std::to_string(config_.patch) + " x " + std::to_string(config_.bands) +
                     "] patch, got " + shape_str(patch.shape()));
  }
  tmamba::EncoderOptions options;
  options.components = config_.components;
  options.fusion = config_.fusion;
  options.scan_mode = config_.scan_mode;

  ForwardResult result;
  std::vector<Tensor> inputs{pixel_embed(patch, params_.embed)};
  for (std::size_t l = 0; l < config_.layers(); ++l) {
    auto layer = mim_layer(inputs, params_.layers[l], plan_.maps[l], plan_.out_maps[l], options);
    result.logits.push_back(decode_scale(layer.fused, params_.heads[l]));
    if (config_.cascade == Cascade::Fused) {
      inputs = {layer.fused};
    } else {
      inputs = std::move(layer.branches);
    }
    result.scales.push_back(std::move(layer.fused));
  }
  return result;
}

std::vector<double> MimModel::predict_logits(const Tensor& patch) const {
  NoGradGuard no_grad;
  const auto result = forward(patch);
  std::vector<double> avg(config_.classes, 0.0);
  for (const auto& logits : result.logits) {
    const auto v = logits.data();
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += v[k];
  }
  for (auto& v : avg) v /= static_cast<double>(result.logits.size());
  return avg;
}

std::size_t MimModel::predict(const Tensor& patch) const { return argmax(predict_logits(patch)); }

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k] > values[best]) best = k;
  return best;
}

}  // namespace mim::model
