#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "mim/checkpoint.hpp"
#include "mim/error.hpp"
#include "mim/model.hpp"
#include "mim/ops.hpp"
#include "mim/train.hpp"
#include "test_support.hpp"

using namespace mim;
using namespace mim::model;
using mim::testing::gradient_gap;
using mim::testing::random_tensor;

namespace {

MimConfig tiny_config(std::size_t patch = 3) {
  MimConfig c;
  c.patch = patch;
  c.bands = 4;
  c.embed = 4;
  c.hidden = 4;
  c.states = 4;
  c.depth = 1;
  c.classes = 2;
  return c;
}

MimParams rebuild(const MimParams& like, std::span<const Tensor> values) {
  MimParams q = like;
  std::size_t i = 0;
  q.visit([&](const std::string&, Tensor& t) { t = values[i++]; });
  return q;
}

std::vector<Sample> random_samples(const MimConfig& c, std::size_t n, std::mt19937_64& rng) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({random_tensor({c.patch, c.patch, c.bands}, rng, -1, 1, false), i % c.classes});
  return out;
}

TrainOptions quiet_options(std::size_t epochs, std::size_t batch) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = batch;
  return o;
}

}  // namespace

TEST(Config, LayerCountAndValidation) {
  for (std::size_t p : {1u, 3u, 7u, 11u}) {
    MimConfig c;
    c.patch = p;
    EXPECT_EQ(c.layers(), (p - 1) / 2);
  }
  MimConfig bad;
  bad.patch = 6;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.patch = 7;
  bad.scan_types = 5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.scan_types = 4;
  bad.classes = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(parse_cascade("diagonal"), std::exception);
  EXPECT_EQ(parse_cascade(cascade_name(Cascade::Branch)), Cascade::Branch);
}

TEST(Embed, IdentityZeroAndPositionIndependence) {
  std::mt19937_64 rng(1);
  const auto patch = random_tensor({3, 3, 4}, rng, -1, 1, false);
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const tmamba::Linear identity{Tensor::from_data({4, 4}, eye), Tensor::zeros({4})};
  EXPECT_EQ(pixel_embed(patch, identity).to_vector(), patch.to_vector());

  const auto lin = tmamba::init_linear(4, 5, rng);
  const auto zero = pixel_embed(Tensor::zeros({3, 3, 4}), lin);
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(zero.data()[k * 5 + c], lin.bias.data()[c]);

  // Transposing the patch commutes with the per-pixel map.
  const auto a = pixel_embed(dihedral(patch, 1), lin), b = dihedral(pixel_embed(patch, lin), 1);
  EXPECT_EQ(a.to_vector(), b.to_vector());
}

TEST(Fusion, WeightsLieOnTheSimplex) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const auto w = fusion_weights(random_tensor({4}, rng, -10, 10, false)).to_vector();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double v : w) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

class Layer : public ::testing::Test {
 protected:
  std::mt19937_64 rng{3};
  MimConfig config = [] {
    auto c = tiny_config(7);
    c.embed = 3;
    c.hidden = 3;
    c.states = 2;
    return c;
  }();
  MimParams params = init_mim_params(config, 5);
  ScanPlan plan = make_scan_plan(config);
  Tensor grid = random_tensor({7, 7, 3}, rng, -1, 1, false);

  LayerOutput run(const Tensor& logits) {
    auto lp = params.layers[0];
    lp.fusion_logits = logits;
    const Tensor in[] = {grid};
    return mim_layer(in, lp, plan.maps[0], plan.out_maps[0], {});
  }
};

TEST_F(Layer, EqualLogitsAverageBranches) {
  const auto out = run(Tensor::zeros({4}));
  ASSERT_EQ(out.branches.size(), 4u);
  EXPECT_EQ(out.fused.shape(), (Shape{5, 5, 3}));
  for (std::size_t i = 0; i < out.fused.numel(); ++i) {
    double mean = 0, lo = 1e300, hi = -1e300;
    for (const auto& b : out.branches) {
      mean += b.data()[i] / 4;
      lo = std::min(lo, b.data()[i]);
      hi = std::max(hi, b.data()[i]);
    }
    EXPECT_NEAR(out.fused.data()[i], mean, 1e-12);
    EXPECT_GE(out.fused.data()[i], lo - 1e-12);
    EXPECT_LE(out.fused.data()[i], hi + 1e-12);
    for (const auto& b : out.branches) EXPECT_LE(std::abs(b.data()[i]), 1.0);
  }
}

TEST_F(Layer, SaturatedLogitSelectsOneBranch) {
  const auto out = run(Tensor::from_data({4}, {0, 0, 50, 0}));
  for (std::size_t i = 0; i < out.fused.numel(); ++i) EXPECT_NEAR(out.fused.data()[i], out.branches[2].data()[i], 1e-10);
}

TEST_F(Layer, BranchesAreIndependentEncoders) {
  const auto out = run(Tensor::zeros({4}));
  EXPECT_NE(out.branches[0].to_vector(), out.branches[1].to_vector());
  EXPECT_NE(params.layers[0].encoders[0].proj_s.weight.to_vector(),
            params.layers[0].encoders[1].proj_s.weight.to_vector());
}

TEST(Stack, ScaleSidesAndLogits) {
  std::mt19937_64 rng(4);
  for (std::size_t p : {3u, 7u, 11u}) {
    auto c = tiny_config(p);
    c.embed = c.hidden = 2;
    c.states = 2;
    c.classes = 3;
    const MimModel m(c, 1);
    const auto r = m.forward(random_tensor({p, p, 4}, rng, -1, 1, false));
    ASSERT_EQ(r.scales.size(), (p - 1) / 2);
    ASSERT_EQ(r.logits.size(), r.scales.size());
    for (std::size_t l = 0; l < r.scales.size(); ++l) {
      const std::size_t side = p - 2 * (l + 1);
      EXPECT_EQ(r.scales[l].shape(), (Shape{side, side, 2}));
      EXPECT_EQ(r.logits[l].shape(), (Shape{3}));
    }
  }
}

TEST(Stack, EveryVariantRuns) {
  std::mt19937_64 rng(5);
  const auto patch = random_tensor({5, 5, 4}, rng, -1, 1, false);
  for (unsigned mask = 0; mask < 8; ++mask)
    for (auto fusion : {tmamba::Fusion::PreMerge, tmamba::Fusion::PostMerge})
      for (auto cascade : {Cascade::Fused, Cascade::Branch})
        for (auto design : {scan::Design::Mamba, scan::Design::Raster, scan::Design::Diagonal, scan::Design::Zigzag}) {
          auto c = tiny_config(5);
          c.components = {.stl = (mask & 1u) != 0, .gdm = (mask & 2u) != 0, .stf = (mask & 4u) != 0};
          c.fusion = fusion;
          c.cascade = cascade;
          c.design = design;
          c.scan_types = 1 + mask % 4;
          const MimModel m(c, 2);
          const auto logits = m.predict_logits(patch);
          ASSERT_EQ(logits.size(), 2u);
          for (double v : logits) EXPECT_TRUE(std::isfinite(v));
        }
}

TEST(Decoder, MeanOverPositions) {
  std::mt19937_64 rng(6);
  HeadParams head{tmamba::init_linear(3, 3, rng), tmamba::init_linear(3, 2, rng)};
  const auto token = random_tensor({1, 1, 3}, rng, -1, 1, false);
  std::vector<double> tiled;
  for (int k = 0; k < 9; ++k) tiled.insert(tiled.end(), token.data().begin(), token.data().end());
  const auto a = decode_scale(token, head), b = decode_scale(Tensor::from_data({3, 3, 3}, tiled), head);
  EXPECT_EQ(a.shape(), (Shape{2}));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a.data()[k], b.data()[k], 1e-14);

  // Independent evaluation of tanh -> linear -> silu -> linear.
  std::vector<double> h(3), want(2);
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = head.hidden.bias.data()[j];
    for (std::size_t i = 0; i < 3; ++i) acc += std::tanh(token.data()[i]) * head.hidden.weight.at({i, j});
    h[j] = acc / (1 + std::exp(-acc));
  }
  for (std::size_t j = 0; j < 2; ++j) {
    want[j] = head.out.bias.data()[j];
    for (std::size_t i = 0; i < 3; ++i) want[j] += h[i] * head.out.weight.at({i, j});
    EXPECT_NEAR(a.data()[j], want[j], 1e-14);
  }
  for (std::size_t q : {1u, 3u, 5u})
    EXPECT_EQ(decode_scale(random_tensor({q, q, 3}, rng, -1, 1, false), head).shape(), (Shape{2}));
}

TEST(Loss, UniformLogitsGiveLogK) {
  for (std::size_t K : {2u, 4u, 9u}) {
    const Tensor logits[] = {Tensor::full({K}, 0.3)};
    EXPECT_NEAR(multiscale_loss(logits, K - 1).item(), std::log(double(K)), 1e-12);
  }
}

TEST(Loss, PerfectLogitsApproachZero) {
  const Tensor logits[] = {Tensor::from_data({3}, {0, 40, 0})};
  EXPECT_LT(multiscale_loss(logits, 1).item(), 1e-15);
}

TEST(Loss, AveragesScales) {
  const Tensor a = Tensor::from_data({3}, {0.2, -1, 0.5}), b = Tensor::from_data({3}, {2, 0.1, -0.3});
  auto ce = [](const Tensor& l, std::size_t y) {
    double z = 0;
    for (double v : l.data()) z += std::exp(v);
    return std::log(z) - l.data()[y];
  };
  const Tensor both[] = {a, b};
  EXPECT_NEAR(multiscale_loss(both, 2).item(), 0.5 * (ce(a, 2) + ce(b, 2)), 1e-12);
  EXPECT_THROW(multiscale_loss(both, 3), std::exception);
}

TEST(Predict, ArgmaxTiesAndShift) {
  const std::vector<double> tie{1, 3, 3, 2};
  EXPECT_EQ(argmax(tie), 1u);
  std::mt19937_64 rng(7);
  auto c = tiny_config(5);
  c.classes = 4;
  const MimModel m(c, 3);
  for (int k = 0; k < 10; ++k) {
    const auto patch = random_tensor({5, 5, 4}, rng, -1, 1, false);
    auto logits = m.predict_logits(patch);
    const auto before = argmax(logits);
    for (auto& v : logits) v += 17.5;
    EXPECT_EQ(argmax(logits), before);
    EXPECT_EQ(m.predict(patch), before);
  }
  const auto zero = Tensor::zeros({5, 5, 4});
  const auto first = m.predict(zero);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(m.predict(zero), first);
}

TEST(Gradient, FullModelMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto config = tiny_config(3);
  MimModel model(config, 11);
  auto params = model.params();
  const auto patch = random_tensor({3, 3, 4}, rng, -1, 1, false);
  const auto inputs = params.tensors();
  auto loss = [&](const std::vector<Tensor>& t) {
    const MimModel m(config, rebuild(params, t));
    const auto r = m.forward(patch);
    return multiscale_loss(r.logits, 1);
  };
  EXPECT_LT(gradient_gap(loss, inputs, 1e-4), 1e-3);
}

TEST(Gradient, BatchGradientMatchesManualMean) {
  std::mt19937_64 rng(9);
  const auto config = tiny_config(5);
  const MimModel model(config, 12);
  const auto samples = random_samples(config, 5, rng);
  const auto bg = batch_gradient(model, samples, 1, 2);
  auto params = model.params();
  const auto tensors = params.tensors();
  std::vector<Tensor> losses;
  for (const auto& s : samples) losses.push_back(multiscale_loss(model.forward(s.patch).logits, s.label));
  const auto total = scale(sum_all(concat(std::vector<Tensor>{reshape(losses[0], {1}), reshape(losses[1], {1}),
                                                              reshape(losses[2], {1}), reshape(losses[3], {1}),
                                                              reshape(losses[4], {1})},
                                          0)),
                           0.2);
  EXPECT_NEAR(bg.loss, total.item(), 1e-12);
  const auto g = grad(total, tensors);
  for (std::size_t k = 0; k < g.size(); ++k)
    EXPECT_LE(mim::testing::max_abs_diff(g[k].to_vector(), bg.grads[k]), 1e-12) << k;
  const auto bg2 = batch_gradient(model, samples, 2, 2);
  EXPECT_EQ(bg.grads, bg2.grads);
}

TEST(Dihedral, GroupActionOnPatch) {
  std::mt19937_64 rng(10);
  const auto patch = random_tensor({5, 5, 2}, rng, -1, 1, false);
  EXPECT_EQ(dihedral(patch, 0).to_vector(), patch.to_vector());
  for (unsigned op = 0; op < 8; ++op) {
    const auto t = dihedral(patch, op);
    EXPECT_EQ(t.at({2, 2, 0}), patch.at({2, 2, 0}));
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        std::size_t rr = r, cc = c;
        if (op & 1u) std::swap(rr, cc);
        if (op & 2u) rr = 4 - rr;
        if (op & 4u) cc = 4 - cc;
        EXPECT_EQ(t.at({r, c, 1}), patch.at({rr, cc, 1})) << op;
      }
  }
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  std::mt19937_64 rng(11);
  const auto config = tiny_config(5);
  MimModel model(config, 13);
  const auto before = model.params().tensors();
  std::vector<std::vector<double>> values;
  for (const auto& t : before) values.push_back(t.to_vector());
  auto opts = quiet_options(1, 4);
  opts.optimizer.lr = 0;
  const auto samples = random_samples(config, 8, rng);
  train(model, samples, opts);
  const auto after = model.params().tensors();
  for (std::size_t k = 0; k < after.size(); ++k) EXPECT_EQ(after[k].to_vector(), values[k]);
}

TEST(Training, SingleSampleLossDecreases) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    std::mt19937_64 rng(20 + seed);
    const auto config = tiny_config(5);
    MimModel model(config, seed);
    const auto samples = random_samples(config, 1, rng);
    auto opts = quiet_options(20, 1);
    opts.optimizer.lr = 5e-3;
    opts.seed = seed;
    const auto history = train(model, samples, opts);
    ASSERT_EQ(history.size(), 20u);
    int violations = 0;
    for (std::size_t e = 1; e < history.size(); ++e) violations += history[e].loss > history[e - 1].loss;
    EXPECT_LE(violations, 2) << "seed " << seed;
    EXPECT_LT(history.back().loss, history.front().loss);
  }
}

TEST(Training, SmallSetIsMemorised) {
  std::mt19937_64 rng(30);
  auto config = tiny_config(5);
  config.embed = config.hidden = 8;
  MimModel model(config, 4);
  const auto samples = random_samples(config, 6, rng);
  auto opts = quiet_options(60, 2);
  opts.optimizer.lr = 5e-3;
  train(model, samples, opts);
  std::vector<Tensor> patches;
  for (const auto& s : samples) patches.push_back(s.patch);
  const auto pred = predict_all(model, patches, 1);
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(pred[i], samples[i].label);
}

TEST(Training, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(31);
  const auto config = tiny_config(5);
  const auto samples = random_samples(config, 12, rng);
  std::vector<std::vector<double>> results[2];
  for (std::size_t threads : {1u, 2u}) {
    MimModel model(config, 5);
    auto opts = quiet_options(2, 6);
    opts.threads = threads;
    opts.shard_size = 2;
    opts.augment = true;
    train(model, samples, opts);
    for (const auto& t : model.params().tensors()) results[threads - 1].push_back(t.to_vector());
  }
  EXPECT_EQ(results[0], results[1]);
}

TEST(Training, ReportsEpochMetrics) {
  std::mt19937_64 rng(32);
  const auto config = tiny_config(5);
  MimModel model(config, 6);
  const auto samples = random_samples(config, 4, rng);
  std::size_t calls = 0;
  auto opts = quiet_options(3, 4);
  opts.on_epoch = [&](const EpochMetrics& m) {
    ++calls;
    EXPECT_EQ(m.epoch, calls);
    EXPECT_EQ(m.scale_losses.size(), 2u);
    EXPECT_NEAR(m.loss, 0.5 * (m.scale_losses[0] + m.scale_losses[1]), 1e-12);
  };
  const auto history = train(model, samples, opts);
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(history.size(), 3u);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto config = tiny_config(5);
  MimModel model(config, 7);
  Checkpoint ckpt;
  ckpt.config = "[model]\npatch = 5\n";
  model.params().visit([&](const std::string& name, Tensor& t) {
    ckpt.tensors.push_back({name, t.shape(), t.to_vector()});
  });
  const auto bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 4), "MIMC");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back, ckpt);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "mim_test_roundtrip.mimc";
  save_checkpoint(path, ckpt);
  EXPECT_EQ(load_checkpoint(path), ckpt);
  std::filesystem::remove(path);
  EXPECT_THROW(ckpt.find("missing"), DataError);
}

TEST(Checkpoint, CorruptionIsRejected) {
  Checkpoint ckpt;
  ckpt.config = "x";
  ckpt.tensors.push_back({"w", {2, 2}, {1, 2, 3, 4}});
  const auto bytes = encode_checkpoint(ckpt);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_checkpoint(""), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.mimc"), DataError);
}
