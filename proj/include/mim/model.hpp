#pragma once

// The multi-scale patch classifier: pixel embedding, a cascade of layers that
// each run one T-Mamba encoder per scan type and fuse them with learned convex
// weights, and one decoder head per recorded scale.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mim/scan.hpp"
#include "mim/ssm.hpp"
#include "mim/tensor.hpp"
#include "mim/tmamba.hpp"

namespace mim::model {

/// What layer l > 1 consumes: the fused output of layer l-1, or for each scan
/// type the same type's output of layer l-1.
enum class Cascade { Fused, Branch };

std::string_view cascade_name(Cascade c);
Cascade parse_cascade(std::string_view name);

struct MimConfig {
  std::size_t patch = 7;       ///< odd input patch side
  std::size_t bands = 16;      ///< input channels after PCA
  std::size_t embed = 64;      ///< C2
  std::size_t hidden = 64;     ///< C3
  std::size_t states = 16;     ///< N
  std::size_t conv_width = 4;
  std::size_t depth = 2;
  std::size_t classes = 2;
  scan::Design design = scan::Design::Mamba;
  std::size_t scan_types = 4;  ///< uses types 1..scan_types
  tmamba::Fusion fusion = tmamba::Fusion::PreMerge;
  Cascade cascade = Cascade::Fused;
  tmamba::Components components;
  ssm::ScanMode scan_mode = ssm::ScanMode::Sequential;

  std::size_t layers() const { return (patch - 1) / 2; }
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  friend bool operator==(const MimConfig&, const MimConfig&) = default;
};

struct LayerParams {
  std::vector<tmamba::TMambaParams> encoders;  ///< one per scan type
  Tensor fusion_logits;                        ///< [scan_types]
};

struct HeadParams {
  tmamba::Linear hidden;  ///< C2 -> C2
  tmamba::Linear out;     ///< C2 -> classes
};

struct MimParams {
  tmamba::Linear embed;  ///< bands -> C2
  std::vector<LayerParams> layers;
  std::vector<HeadParams> heads;  ///< one per scale, same order as layers

  /// Calls v(name, tensor&) for every parameter in a fixed order.
  template <typename Visitor>
  void visit(Visitor&& v) {
    v("embed.weight", embed.weight);
    v("embed.bias", embed.bias);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lp = "layer" + std::to_string(l) + ".";
      for (std::size_t m = 0; m < layers[l].encoders.size(); ++m)
        layers[l].encoders[m].visit(lp + "enc" + std::to_string(m + 1) + ".", v);
      v(lp + "fusion_logits", layers[l].fusion_logits);
    }
    for (std::size_t s = 0; s < heads.size(); ++s) {
      const std::string hp = "head" + std::to_string(s) + ".";
      v(hp + "hidden.weight", heads[s].hidden.weight);
      v(hp + "hidden.bias", heads[s].hidden.bias);
      v(hp + "out.weight", heads[s].out.weight);
      v(hp + "out.bias", heads[s].out.bias);
    }
  }
  std::vector<Tensor> tensors();
  std::vector<std::string> names();
};

MimParams init_mim_params(const MimConfig& config, std::uint64_t seed);

/// Scan maps for every layer: maps[l][m] at the layer's input side and
/// out_maps[l][m] at its output side.
struct ScanPlan {
  std::vector<std::vector<scan::ScanMap>> maps;
  std::vector<std::vector<scan::ScanMap>> out_maps;
};
ScanPlan make_scan_plan(const MimConfig& config);

/// [p x p x C] -> [p x p x C2], same linear map at every pixel.
Tensor pixel_embed(const Tensor& patch, const tmamba::Linear& embed);

/// softmax(logits): convex fusion weights.
Tensor fusion_weights(const Tensor& logits);

struct LayerOutput {
  std::vector<Tensor> branches;  ///< tanh(T-Mamba) per scan type, [q x q x C2]
  Tensor fused;                  ///< [q x q x C2]
};

/// One cascade layer. `inputs` holds one grid shared by all encoders or one
/// grid per encoder.
LayerOutput mim_layer(std::span<const Tensor> inputs, const LayerParams& params,
                      std::span<const scan::ScanMap> maps, std::span<const scan::ScanMap> out_maps,
                      const tmamba::EncoderOptions& options);

/// Mean over positions -> tanh -> Linear -> SiLU -> Linear: [classes].
Tensor decode_scale(const Tensor& scale_feature, const HeadParams& head);

/// Mean over scales of the cross-entropy of each scale's logits.
Tensor multiscale_loss(std::span<const Tensor> scale_logits, std::size_t label);

struct ForwardResult {
  std::vector<Tensor> scales;  ///< fused feature per layer, sides p-2, p-4, ..., 1
  std::vector<Tensor> logits;  ///< per scale [classes]
};

class MimModel {
 public:
  MimModel(MimConfig config, MimParams params);
  MimModel(const MimConfig& config, std::uint64_t seed);

  const MimConfig& config() const { return config_; }
  MimParams& params() { return params_; }
  const MimParams& params() const { return params_; }

  ForwardResult forward(const Tensor& patch) const;
  /// Mean of the per-scale logits (no gradient recording).
  std::vector<double> predict_logits(const Tensor& patch) const;
  /// argmax of predict_logits, lowest index on ties.
  std::size_t predict(const Tensor& patch) const;

 private:
  MimConfig config_;
  MimParams params_;
  ScanPlan plan_;
};

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace mim::model
