#include "mim/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "mim/error.hpp"
#include "mim/ops.hpp"

namespace mim::model {

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(std::span<const std::vector<double>> grads) {
  if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: gradient count");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].mutable_values();
    const auto& g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opt_.beta1 * m[k] + (1 - opt_.beta1) * g[k];
      v[k] = opt_.beta2 * v[k] + (1 - opt_.beta2) * g[k] * g[k];
      const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt_.eps);
      w[k] -= opt_.lr * (update + opt_.weight_decay * w[k]);
    }
  }
}

namespace {

struct ShardResult {
  double loss = 0;
  std::vector<double> scale_losses;
  std::size_t correct = 0;
  std::vector<std::vector<double>> grads;
};

ShardResult run_shard(const MimModel& model, const std::vector<Tensor>& params,
                      std::span<const Sample> shard, double weight) {
  ShardResult r;
  const std::size_t scales = model.config().layers();
  r.scale_losses.assign(scales, 0.0);
  Tensor total;
  for (const auto& s : shard) {
    const auto out = model.forward(s.patch);
    const Tensor loss = multiscale_loss(out.logits, s.label);
    std::vector<double> avg(model.config().classes, 0.0);
    for (std::size_t k = 0; k < scales; ++k) {
      const std::size_t labels[] = {s.label};
      r.scale_losses[k] += cross_entropy_with_softmax(out.logits[k], labels).item();
      const auto v = out.logits[k].data();
      for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += v[c];
    }
    if (argmax(avg) == s.label) ++r.correct;
    r.loss += loss.item();
    total = total.defined() ? add(total, loss) : loss;
  }
  const auto g = grad(scale(total, weight), params);
  for (const auto& t : g) r.grads.push_back(t.to_vector());
  return r;
}

}  // namespace

BatchGradient batch_gradient(const MimModel& model, std::span<const Sample> samples,
                             std::size_t threads, std::size_t shard_size) {
  if (samples.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  shard_size = std::max<std::size_t>(1, shard_size);
  MimParams params_view = model.params();
  const auto params = params_view.tensors();
  const std::size_t n_shards = (samples.size() + shard_size - 1) / shard_size;
  const double weight = 1.0 / static_cast<double>(samples.size());

  std::vector<ShardResult> results(n_shards);
  std::vector<std::exception_ptr> errors(n_shards);
  auto work = [&](std::size_t worker, std::size_t n_workers) {
    for (std::size_t s = worker; s < n_shards; s += n_workers) {
      try {
        const std::size_t begin = s * shard_size;
        const std::size_t len = std::min(shard_size, samples.size() - begin);
        results[s] = run_shard(model, params, samples.subspan(begin, len), weight);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(threads, 1, n_shards);
  if (n_workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w, n_workers);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchGradient out;
  out.scale_losses.assign(model.config().layers(), 0.0);
  out.grads = std::move(results[0].grads);
  for (std::size_t s = 0; s < n_shards; ++s) {
    const auto& r = results[s];
    out.loss += r.loss;
    out.correct += r.correct;
    for (std::size_t k = 0; k < out.scale_losses.size(); ++k) out.scale_losses[k] += r.scale_losses[k];
    if (s == 0) continue;
    for (std::size_t i = 0; i < out.grads.size(); ++i)
      for (std::size_t k = 0; k < out.grads[i].size(); ++k) out.grads[i][k] += r.grads[i][k];
  }
  out.loss *= weight;
  for (auto& v : out.scale_losses) v *= weight;
  for (const auto& g : out.grads)
    for (double v : g)
      if (!std::isfinite(v)) throw NumericError("training: non-finite gradient");
  return out;
}

Tensor dihedral(const Tensor& patch, unsigned op) {
  if (patch.rank() != 3 || patch.dim(0) != patch.dim(1)) {
    throw ShapeError("dihedral: expected a square [p x p x C] patch");
  }
  const std::size_t p = patch.dim(0), C = patch.dim(2);
  const auto src = patch.data();
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) {
      std::size_t i = r, j = c;
      if (op & 1u) std::swap(i, j);
      if (op & 2u) i = p - 1 - i;
      if (op & 4u) j = p - 1 - j;
      std::copy_n(src.begin() + (i * p + j) * C, C, out.begin() + (r * p + c) * C);
    }
  return Tensor::from_data(patch.shape(), std::move(out));
}

std::vector<EpochMetrics> train(MimModel& model, std::span<const Sample> samples,
                                const TrainOptions& options) {
  if (samples.empty()) throw std::invalid_argument("train: no training samples");
  for (const auto& s : samples)
    if (s.label >= model.config().classes) throw std::invalid_argument("train: label out of range");
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  AdamW optimizer(model.params().tensors(), options.optimizer);
  std::mt19937_64 rng(options.seed ^ 0x5eedULL);
  std::mt19937_64 augment_rng(options.seed ^ 0xa06eULL);
  std::uniform_int_distribution<unsigned> pick_op(0, 7);
  std::vector<std::size_t> order(samples.size());
  std::vector<EpochMetrics> history;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.scale_losses.assign(model.config().layers(), 0.0);
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t len = std::min(batch, order.size() - begin);
      std::vector<Sample> chunk;
      chunk.reserve(len);
      for (std::size_t k = 0; k < len; ++k) {
        const Sample& s = samples[order[begin + k]];
        if (options.augment) chunk.push_back({dihedral(s.patch, pick_op(augment_rng)), s.label});
        else chunk.push_back(s);
      }
      const auto g = batch_gradient(model, chunk, options.threads, options.shard_size);
      if (!std::isfinite(g.loss)) {
        throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch));
      }
      optimizer.step(g.grads);
      const double n = static_cast<double>(len);
      metrics.loss += g.loss * n;
      for (std::size_t k = 0; k < metrics.scale_losses.size(); ++k)
        metrics.scale_losses[k] += g.scale_losses[k] * n;
      correct += g.correct;
    }
    const double total = static_cast<double>(samples.size());
    metrics.loss /= total;
    for (auto& v : metrics.scale_losses) v /= total;
    metrics.train_oa = static_cast<double>(correct) / total;
    if (options.on_epoch) options.on_epoch(metrics);
    history.push_back(std::move(metrics));
  }
  return history;
}

std::vector<std::size_t> predict_all(const MimModel& model, std::span<const Tensor> patches,
                                     std::size_t threads) {
  std::vector<std::size_t> out(patches.size());
  std::vector<std::exception_ptr> errors(patches.size());
  auto work = [&](std::size_t worker, std::size_t n_workers) {
    for (std::size_t i = worker; i < patches.size(); i += n_workers) {
      try {
        out[i] = model.predict(patches[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, patches.size()));
  if (n_workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w, n_workers);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace mim::model
