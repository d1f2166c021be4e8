#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mim/model.hpp"

namespace mim::model {

struct Sample {
  Tensor patch;       ///< [p x p x bands]
  std::size_t label;  ///< 0-based class index
};

struct AdamWOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay, updating leaf tensors in place.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);
  void step(std::span<const std::vector<double>> grads);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0;        ///< mean L_total over the epoch's samples
  std::vector<double> scale_losses;
  double train_oa = 0;    ///< accuracy of the epoch's forward passes
};

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  AdamWOptions optimizer;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Samples per gradient graph. Shard gradients are summed in shard order,
  /// so results do not depend on `threads`.
  std::size_t shard_size = 8;
  /// Apply a random dihedral transform to every training patch each epoch.
  bool augment = false;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// One of the 8 symmetries of the square applied to a [p x p x C] patch:
/// bit 0 transposes, bit 1 flips rows, bit 2 flips columns. The centre stays put.
Tensor dihedral(const Tensor& patch, unsigned op);

/// Minimises the mean multi-scale loss. Throws NumericError when a loss or
/// gradient turns non-finite.
std::vector<EpochMetrics> train(MimModel& model, std::span<const Sample> samples,
                                const TrainOptions& options);

/// Loss and gradients of the mean multi-scale loss over `samples`.
struct BatchGradient {
  double loss = 0;
  std::vector<double> scale_losses;
  std::size_t correct = 0;
  std::vector<std::vector<double>> grads;  ///< per parameter, MimParams::tensors order
};
BatchGradient batch_gradient(const MimModel& model, std::span<const Sample> samples,
                             std::size_t threads, std::size_t shard_size);

/// Class predictions for every sample (no gradient recording).
std::vector<std::size_t> predict_all(const MimModel& model, std::span<const Tensor> patches,
                                     std::size_t threads);

}  // namespace mim::model
