#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mim/binary_io.hpp"
#include "mim/cli.hpp"
#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/scan.hpp"

namespace mim::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kCubeFile = "cube.hsic";
constexpr const char* kLabelsFile = "labels.hsil";
constexpr const char* kManifestFile = "manifest.txt";

struct HeightWidth {
  std::size_t height = 0, width = 0;
};

HeightWidth parse_hw(const std::string& text) {
  const auto x = text.find('x');
  std::size_t h = 0, w = 0;
  std::size_t used_h = 0, used_w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument("no separator");
    h = std::stoul(text.substr(0, x), &used_h);
    w = std::stoul(text.substr(x + 1), &used_w);
  } catch (const std::exception&) {
    throw UsageError("--hw expects HxW, got '" + text + "'");
  }
  if (used_h != x || used_w != text.size() - x - 1 || h == 0 || w == 0) {
    throw UsageError("--hw expects positive HxW, got '" + text + "'");
  }
  return {h, w};
}

void write_text(const fs::path& path, const std::string& text) { io::write_file(path, text); }

/// --data names a directory holding the standard files, or the cube itself.
struct DataFiles {
  fs::path cube, labels, manifest;
};

DataFiles locate_data(const std::string& data, const std::string& cube, const std::string& labels,
                      const std::string& manifest) {
  DataFiles f;
  fs::path dir = data;
  if (!data.empty() && fs::is_regular_file(data)) {
    f.cube = data;
    dir = fs::path(data).parent_path();
  } else {
    f.cube = dir / kCubeFile;
  }
  f.labels = dir / kLabelsFile;
  f.manifest = dir / kManifestFile;
  if (!cube.empty()) f.cube = cube;
  if (!labels.empty()) f.labels = labels;
  if (!manifest.empty()) f.manifest = manifest;
  return f;
}

void print_metrics(std::ostream& out, const Evaluation& ev) {
  const auto& m = ev.metrics;
  char buf[128];
  std::snprintf(buf, sizeof buf, "OA     %.4f\nAA     %.4f\nkappa  %.4f\n", m.oa, m.aa, m.kappa);
  out << buf << "class  samples  accuracy\n";
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    std::size_t n = 0;
    for (auto v : ev.confusion[k]) n += v;
    if (n == 0) {
      std::snprintf(buf, sizeof buf, "%5zu  %7zu  %8s\n", k + 1, n, "n/a");
    } else {
      std::snprintf(buf, sizeof buf, "%5zu  %7zu  %8.4f\n", k + 1, n, m.per_class[k]);
    }
    out << buf;
  }
}

std::uint64_t env_seed() {
  const char* text = std::getenv("MIM_SEED");
  std::uint64_t v = 0;
  std::istringstream in(text);
  if (!(in >> v) || !in.eof()) throw UsageError(std::string("MIM_SEED must be an integer, got '") + text + "'");
  return v;
}

int cmd_synth(std::ostream& out, std::uint64_t seed, const std::string& hw, std::size_t bands,
              std::size_t classes, std::size_t train_per_class, const fs::path& dir) {
  const auto [h, w] = parse_hw(hw);
  if (classes < 2) throw UsageError("synth: --classes must be at least 2 (K ≥ 2)");
  if (bands == 0) throw UsageError("--bands must be >= 1");
  hsi::SynthOptions opt;
  opt.seed = seed;
  opt.height = h;
  opt.width = w;
  opt.bands = bands;
  opt.classes = classes;
  const auto scene = hsi::synth_generate(opt);
  const auto manifest = hsi::make_split(scene.labels, train_per_class, seed);

  std::error_code ec;
  fs::create_directories(dir, ec);
  hsi::save_cube(dir / kCubeFile, scene.cube);
  hsi::save_labels(dir / kLabelsFile, scene.labels);
  hsi::save_manifest(dir / kManifestFile, manifest);

  std::vector<std::size_t> total(classes + 1, 0), train(classes + 1, 0);
  for (const auto& e : manifest.entries) {
    ++total[e.label];
    if (e.split == hsi::Split::Train) ++train[e.label];
  }
  out << "wrote " << (dir / kCubeFile).string() << ", " << (dir / kLabelsFile).string() << ", "
      << (dir / kManifestFile).string() << "\n";
  out << "class  pixels  train  test\n";
  char buf[96];
  for (std::size_t k = 1; k <= classes; ++k) {
    std::snprintf(buf, sizeof buf, "%5zu  %6zu  %5zu  %4zu\n", k, total[k], train[k], total[k] - train[k]);
    out << buf;
  }
  return kExitOk;
}

int cmd_train(std::ostream& out, const std::string& config_path, std::optional<std::size_t> epochs,
              std::optional<std::size_t> threads, std::optional<std::uint64_t> seed) {
  auto cfg = load_run_config(config_path);
  if (std::getenv("MIM_SEED")) cfg.seed = env_seed();
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  if (threads) {
    if (*threads == 0) throw UsageError("--threads must be >= 1");
    cfg.threads = *threads;
  }
  validate_paths(cfg);
  const auto data = load_dataset(cfg.cube, cfg.labels, cfg.manifest);

  auto report = [&](const model::EpochMetrics& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %4zu  loss %.6f  train_oa %.4f\n", m.epoch, m.loss, m.train_oa);
    out << buf << std::flush;
  };
  const auto run = train_run(cfg, data, report);
  model::save_checkpoint(run.config.checkpoint_path(), make_checkpoint(run));
  write_text(run.config.metrics_path(), format_metrics_log(run.history));
  out << "checkpoint " << run.config.checkpoint_path().string() << "\n"
      << "metrics    " << run.config.metrics_path().string() << "\n";
  return kExitOk;
}

TrainedRun load_run(const std::string& checkpoint, std::optional<std::size_t> threads) {
  if (!fs::is_regular_file(checkpoint)) throw DataError("checkpoint: no such file " + checkpoint);
  auto run = restore_run(model::load_checkpoint(checkpoint));
  if (threads) {
    if (*threads == 0) throw UsageError("--threads must be >= 1");
    run.config.threads = *threads;
  }
  return run;
}

int cmd_eval(std::ostream& out, const std::string& checkpoint, const DataFiles& files,
             const std::string& split, const std::string& confusion_path,
             std::optional<std::size_t> threads) {
  const auto run = load_run(checkpoint, threads);
  const auto cube = hsi::load_cube(files.cube);
  const auto manifest = hsi::load_manifest(files.manifest);
  if (fs::is_regular_file(files.labels)) {
    Dataset d{cube, hsi::load_labels(files.labels), manifest};
    check_dataset(d);
  }
  std::vector<hsi::ManifestEntry> entries;
  if (split == "test") entries = manifest.select(hsi::Split::Test);
  else if (split == "train") entries = manifest.select(hsi::Split::Train);
  else if (split == "all") entries = manifest.entries;
  else throw UsageError("--split expects train|test|all, got '" + split + "'");

  const auto ev = evaluate(run, cube, entries);
  print_metrics(out, ev);
  const fs::path cm = confusion_path.empty() ? fs::path(checkpoint).parent_path() / "confusion.csv"
                                             : fs::path(confusion_path);
  write_text(cm, format_confusion(ev.confusion));
  out << "confusion " << cm.string() << "\n";
  return kExitOk;
}

int cmd_predict_map(std::ostream& out, const std::string& checkpoint, const DataFiles& files,
                    const fs::path& image, bool labeled_only, std::optional<std::size_t> threads) {
  const auto run = load_run(checkpoint, threads);
  const auto cube = hsi::load_cube(files.cube);
  std::optional<hsi::LabelMap> labels;
  if (labeled_only) {
    labels = hsi::load_labels(files.labels);
    if (labels->height != cube.height || labels->width != cube.width) {
      throw DataError("predict-map: label map and cube extents differ");
    }
  }
  const auto pred = predict_pixels(run, cube);
  std::vector<std::uint16_t> classes(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    classes[i] = labels && labels->labels[i] == 0 ? 0 : static_cast<std::uint16_t>(pred[i] + 1);
  }
  write_text(image, encode_ppm(cube.height, cube.width, classes));
  out << "wrote " << image.string() << " (" << cube.width << "x" << cube.height << ")\n";
  return kExitOk;
}

int cmd_scan_viz(std::ostream& out, std::size_t p, const std::string& design, int type) {
  const auto map = scan::make_scan_map(p, scan::parse_design(design), type);
  out << scan::dump(map);
  return kExitOk;
}

int cmd_gradcheck(std::ostream& out, const std::string& preset, bool corrupt) {
  struct HookReset {
    ~HookReset() { testing_hooks::set_corrupt_silu_backward(false); }
  } reset;
  testing_hooks::set_corrupt_silu_backward(corrupt);
  const auto suites = run_gradcheck_suites(preset);
  bool ok = true;
  char buf[160];
  out << "suite            checks  max_rel_error  tolerance  status\n";
  for (const auto& s : suites) {
    std::snprintf(buf, sizeof buf, "%-15s  %6zu  %13.3e  %9.0e  %s\n", s.name.c_str(), s.checks,
                  s.max_rel_error, s.tolerance, s.passed() ? "PASS" : "FAIL");
    out << buf;
    for (const auto& f : s.failures) out << "  " << f << "\n";
    ok = ok && s.passed();
  }
  return ok ? kExitOk : kExitNumeric;
}

struct AblateArgs {
  std::string grid;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  std::optional<std::size_t> epochs;
  std::string hw = "64x64";
  std::optional<std::size_t> train_per_class;
  std::size_t threads = 1;
  std::string out;
};

int cmd_ablate(std::ostream& out, std::ostream& err, const AblateArgs& a) {
  const auto grid = parse_grid(a.grid);
  if (a.seeds == 0) throw UsageError("--seeds must be >= 1");
  if (a.threads == 0) throw UsageError("--threads must be >= 1");
  auto recipe = default_recipe();
  const auto [h, w] = parse_hw(a.hw);
  recipe.scene.height = h;
  recipe.scene.width = w;
  if (a.epochs) recipe.run.epochs = *a.epochs;
  if (a.train_per_class) recipe.train_per_class = *a.train_per_class;
  recipe.run.threads = a.threads;
  const auto data = make_synthetic(recipe);

  std::vector<RecipeResult> rows;
  for (const auto& v : ablation_variants(grid, recipe.run)) {
    for (std::size_t s = 0; s < a.seeds; ++s) {
      rows.push_back(run_recipe(v.run, data.dataset, a.first_seed + s, v.name));
      char buf[128];
      std::snprintf(buf, sizeof buf, "%-20s seed %llu  OA %.4f\n", v.name.c_str(),
                    static_cast<unsigned long long>(rows.back().seed), rows.back().metrics.oa);
      err << buf << std::flush;
    }
  }
  const auto csv = format_ablation_csv(rows);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "wrote " << a.out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale scan classifier for hyperspectral patches", "mim"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene with a default split");
  std::uint64_t synth_seed = 0;
  std::string synth_hw = "64x64", synth_out = ".";
  std::size_t synth_bands = 32, synth_classes = 4, synth_train = 20;
  synth->add_option("--seed", synth_seed, "Scene seed")->capture_default_str();
  synth->add_option("--hw", synth_hw, "Height x width, e.g. 64x64")->capture_default_str();
  synth->add_option("--bands", synth_bands, "Spectral bands")->capture_default_str();
  synth->add_option("--classes", synth_classes, "Number of classes K")->capture_default_str();
  synth->add_option("--train-per-class", synth_train, "Training pixels per class")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model from a run configuration");
  std::string train_config;
  std::optional<std::size_t> train_epochs, train_threads;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "INI run configuration")->required();
  train->add_option("--epochs", train_epochs, "Override [train] epochs");
  train->add_option("--threads", train_threads, "Override [train] threads");
  train->add_option("--seed", train_seed, "Override [train] seed (and MIM_SEED)");

  std::string data_dir, data_cube, data_labels, data_manifest, checkpoint;
  std::optional<std::size_t> run_threads;
  auto add_data_options = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
    cmd->add_option("--data", data_dir, "Directory with cube.hsic, labels.hsil, manifest.txt (or a cube file)");
    cmd->add_option("--cube", data_cube, "Cube file (overrides --data)");
    cmd->add_option("--labels", data_labels, "Label map file (overrides --data)");
    cmd->add_option("--threads", run_threads, "Worker threads");
  };

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
  std::string eval_split = "test", eval_confusion;
  add_data_options(eval);
  eval->add_option("--manifest", data_manifest, "Split manifest (overrides --data)");
  eval->add_option("--split", eval_split, "train|test|all")->capture_default_str();
  eval->add_option("--confusion", eval_confusion, "Confusion matrix CSV (default: next to the checkpoint)");

  auto* predict = app.add_subcommand("predict-map", "Write a classification map as a PPM image");
  std::string map_out;
  bool labeled_only = false;
  add_data_options(predict);
  predict->add_option("--out", map_out, "Output .ppm")->required();
  predict->add_flag("--labeled-only", labeled_only, "Paint unlabeled pixels black");

  auto* viz = app.add_subcommand("scan-viz", "Print a scan ordering and its continuity");
  std::size_t viz_p = 0;
  std::string viz_design = "mamba";
  int viz_type = 1;
  viz->add_option("--p", viz_p, "Patch side (odd)")->required();
  viz->add_option("--design", viz_design, "mamba|raster|diagonal|zigzag")->capture_default_str();
  viz->add_option("--type", viz_type, "Scan type 1..4")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  std::string gc_preset = "tiny";
  bool gc_corrupt = false;
  gc->add_option("--preset", gc_preset, "tiny|full")->capture_default_str();
  gc->add_flag("--corrupt-silu", gc_corrupt)->group("");

  auto* ablate = app.add_subcommand("ablate", "Train an ablation grid on the synthetic recipe");
  AblateArgs ab;
  ablate->add_option("--grid", ab.grid, "components|scans")->required();
  ablate->add_option("--seeds", ab.seeds, "Seeds per variant")->capture_default_str();
  ablate->add_option("--first-seed", ab.first_seed, "First model seed")->capture_default_str();
  ablate->add_option("--epochs", ab.epochs, "Override the recipe's epochs");
  ablate->add_option("--hw", ab.hw, "Scene height x width")->capture_default_str();
  ablate->add_option("--train-per-class", ab.train_per_class, "Override the recipe's training pixels per class");
  ablate->add_option("--threads", ab.threads, "Worker threads")->capture_default_str();
  ablate->add_option("--out", ab.out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == static_cast<int>(CLI::ExitCodes::Success) ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) {
      return cmd_synth(out, synth_seed, synth_hw, synth_bands, synth_classes, synth_train, synth_out);
    }
    if (*train) return cmd_train(out, train_config, train_epochs, train_threads, train_seed);
    const auto files = locate_data(data_dir, data_cube, data_labels, data_manifest);
    if (*eval) return cmd_eval(out, checkpoint, files, eval_split, eval_confusion, run_threads);
    if (*predict) return cmd_predict_map(out, checkpoint, files, map_out, labeled_only, run_threads);
    if (*viz) return cmd_scan_viz(out, viz_p, viz_design, viz_type);
    if (*gc) return cmd_gradcheck(out, gc_preset, gc_corrupt);
    if (*ablate) return cmd_ablate(out, err, ab);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace mim::cli
