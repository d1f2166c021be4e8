#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mim/cli.hpp"
#include "mim/error.hpp"

namespace mim::cli {
namespace {

constexpr std::size_t kPredictChunk = 1024;

std::vector<Tensor> patches_at(const hsi::HsiCube& reduced,
                               const std::vector<std::pair<std::size_t, std::size_t>>& cells,
                               std::size_t patch) {
  std::vector<Tensor> out;
  out.reserve(cells.size());
  for (const auto& [r, c] : cells) out.push_back(hsi::extract_patch(reduced, r, c, patch));
  return out;
}

model::NamedTensor record(const std::string& name, Shape shape, std::vector<double> values) {
  return {name, std::move(shape), std::move(values)};
}

}  // namespace

void check_dataset(const Dataset& data) {
  data.cube.validate();
  if (data.labels.height != data.cube.height || data.labels.width != data.cube.width) {
    throw DataError("dataset: label map is " + std::to_string(data.labels.height) + "x" +
                    std::to_string(data.labels.width) + " but the cube is " +
                    std::to_string(data.cube.height) + "x" + std::to_string(data.cube.width));
  }
  data.manifest.validate(data.labels);
}

Dataset load_dataset(const std::filesystem::path& cube, const std::filesystem::path& labels,
                     const std::filesystem::path& manifest) {
  Dataset d{hsi::load_cube(cube), hsi::load_labels(labels), hsi::load_manifest(manifest)};
  check_dataset(d);
  return d;
}

std::vector<model::Sample> make_samples(const hsi::HsiCube& reduced,
                                        const std::vector<hsi::ManifestEntry>& entries,
                                        std::size_t patch) {
  std::vector<model::Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.label == 0) throw DataError("samples: manifest entry with class 0");
    out.push_back({hsi::extract_patch(reduced, e.row, e.col, patch), std::size_t{e.label} - 1});
  }
  return out;
}

TrainedRun train_run(const RunConfig& config, const Dataset& data,
                     std::function<void(const model::EpochMetrics&)> on_epoch) {
  check_dataset(data);
  auto pca = hsi::pca_fit(data.cube, config.pca_components);
  const auto reduced = hsi::pca_apply(pca, data.cube);

  RunConfig resolved = config;
  const std::size_t bands = pca.output_bands();
  const std::size_t classes = data.labels.max_class();
  if (config.bands_given && config.model.bands != bands) {
    throw DataError("config [model] bands = " + std::to_string(config.model.bands) +
                    " but the reduced cube has " + std::to_string(bands));
  }
  if (config.classes_given && config.model.classes != classes) {
    throw DataError("config [model] classes = " + std::to_string(config.model.classes) +
                    " but the label map has " + std::to_string(classes));
  }
  if (classes < 2) throw DataError("dataset: need at least 2 classes, found " + std::to_string(classes));
  resolved.model.bands = bands;
  resolved.model.classes = classes;
  resolved.bands_given = resolved.classes_given = true;

  const auto samples = make_samples(reduced, data.manifest.select(hsi::Split::Train), config.model.patch);
  if (samples.empty()) throw DataError("dataset: manifest has no training entries");

  model::MimModel net(resolved.model, resolved.seed);
  auto options = resolved.train_options();
  options.on_epoch = std::move(on_epoch);
  auto history = model::train(net, samples, options);
  return {std::move(resolved), std::move(pca), std::move(net), std::move(history)};
}

model::Checkpoint make_checkpoint(const TrainedRun& run) {
  model::Checkpoint ckpt;
  ckpt.config = format_run_config(run.config);
  auto params = run.model.params();
  params.visit([&](const std::string& name, Tensor& t) {
    ckpt.tensors.push_back(record(name, t.shape(), t.to_vector()));
  });
  const auto& pca = run.pca;
  ckpt.tensors.push_back(record("pca.mean", {pca.input_bands}, pca.mean));
  ckpt.tensors.push_back(record("pca.components", {pca.output_bands(), pca.input_bands}, pca.components));
  ckpt.tensors.push_back(record("pca.eigenvalues", {pca.output_bands()}, pca.eigenvalues));
  return ckpt;
}

TrainedRun restore_run(const model::Checkpoint& ckpt) {
  RunConfig config;
  try {
    config = parse_run_config(ckpt.config);
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  if (!config.bands_given || !config.classes_given) {
    throw DataError("checkpoint config: bands and classes must be recorded");
  }

  auto params = model::init_mim_params(config.model, 0);
  params.visit([&](const std::string& name, Tensor& t) {
    const auto& rec = ckpt.find(name);
    if (rec.shape != t.shape()) throw DataError("checkpoint: record '" + name + "' has the wrong shape");
    t.mutable_values() = rec.values;
  });

  hsi::PcaModel pca;
  const auto& mean = ckpt.find("pca.mean");
  const auto& comps = ckpt.find("pca.components");
  const auto& eig = ckpt.find("pca.eigenvalues");
  const std::size_t C = mean.values.size(), k = eig.values.size();
  if (mean.shape != Shape{C} || comps.shape != Shape{k, C} || eig.shape != Shape{k} ||
      comps.values.size() != k * C) {
    throw DataError("checkpoint: inconsistent pca records");
  }
  if (k != config.model.bands) {
    throw DataError("checkpoint: pca keeps " + std::to_string(k) + " bands, model expects " +
                    std::to_string(config.model.bands));
  }
  pca.input_bands = C;
  pca.mean = mean.values;
  pca.components = comps.values;
  pca.eigenvalues = eig.values;
  pca.numerical_rank = k;
  model::MimModel net(config.model, std::move(params));
  return {std::move(config), std::move(pca), std::move(net), {}};
}

std::string format_metrics_log(const std::vector<model::EpochMetrics>& history) {
  std::ostringstream o;
  o << "epoch,loss";
  const std::size_t scales = history.empty() ? 0 : history.front().scale_losses.size();
  for (std::size_t s = 0; s < scales; ++s) o << ",loss_s" << s + 1;
  o << ",train_oa\n";
  char buf[64];
  for (const auto& m : history) {
    o << m.epoch;
    std::snprintf(buf, sizeof buf, ",%.9g", m.loss);
    o << buf;
    for (double l : m.scale_losses) {
      std::snprintf(buf, sizeof buf, ",%.9g", l);
      o << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", m.train_oa);
    o << buf;
  }
  return o.str();
}

Evaluation evaluate(const TrainedRun& run, const hsi::HsiCube& raw_cube,
                    const std::vector<hsi::ManifestEntry>& entries) {
  if (entries.empty()) throw DataError("eval: no manifest entries in the selected split");
  const std::size_t K = run.config.model.classes;
  for (const auto& e : entries) {
    if (e.label == 0 || e.label > K) {
      throw DataError("eval: entry at (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                      ") has class " + std::to_string(e.label) + " but the model has " +
                      std::to_string(K) + " classes");
    }
  }
  const auto reduced = hsi::pca_apply(run.pca, raw_cube);
  Evaluation ev;
  for (std::size_t begin = 0; begin < entries.size(); begin += kPredictChunk) {
    const std::size_t end = std::min(entries.size(), begin + kPredictChunk);
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t i = begin; i < end; ++i) {
      if (entries[i].row >= raw_cube.height || entries[i].col >= raw_cube.width) {
        throw DataError("eval: manifest entry outside the cube");
      }
      cells.push_back({entries[i].row, entries[i].col});
      ev.truth.push_back(entries[i].label - 1);
    }
    const auto patches = patches_at(reduced, cells, run.config.model.patch);
    const auto pred = model::predict_all(run.model, patches, run.config.threads);
    ev.predicted.insert(ev.predicted.end(), pred.begin(), pred.end());
  }
  ev.confusion = hsi::confusion_matrix(ev.truth, ev.predicted, K);
  ev.metrics = hsi::compute_metrics(ev.confusion);
  return ev;
}

std::vector<std::size_t> predict_pixels(const TrainedRun& run, const hsi::HsiCube& raw_cube) {
  const auto reduced = hsi::pca_apply(run.pca, raw_cube);
  const std::size_t total = raw_cube.height * raw_cube.width;
  std::vector<std::size_t> out;
  out.reserve(total);
  for (std::size_t begin = 0; begin < total; begin += kPredictChunk) {
    const std::size_t end = std::min(total, begin + kPredictChunk);
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t i = begin; i < end; ++i) cells.push_back({i / raw_cube.width, i % raw_cube.width});
    const auto patches = patches_at(reduced, cells, run.config.model.patch);
    const auto pred = model::predict_all(run.model, patches, run.config.threads);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

std::string encode_ppm(std::size_t height, std::size_t width,
                       const std::vector<std::uint16_t>& classes) {
  if (classes.size() != height * width) throw std::invalid_argument("ppm: class map size mismatch");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + 3 * classes.size());
  for (auto k : classes) {
    if (k == 0) {
      out.append(3, '\0');
      continue;
    }
    for (unsigned char v : kPalette[(k - 1) % 16]) out.push_back(static_cast<char>(v));
  }
  return out;
}

std::string format_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  std::ostringstream o;
  o << "true\\pred";
  for (std::size_t j = 0; j < confusion.size(); ++j) o << "," << j + 1;
  o << "\n";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    o << i + 1;
    for (auto v : confusion[i]) o << "," << v;
    o << "\n";
  }
  return o.str();
}

}  // namespace mim::cli
