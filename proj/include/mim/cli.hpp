#pragma once

// Run configuration, the experiment pipeline behind the `mim` commands, and
// the command dispatcher itself.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mim/checkpoint.hpp"
#include "mim/hsi.hpp"
#include "mim/model.hpp"
#include "mim/train.hpp"

namespace mim::cli {

/// Exit codes of the `mim` executable.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// INI layout with sections [data], [model], [train] and [output]. Unknown
/// sections or keys are rejected. `bands` and `classes` are resolved from the
/// data when absent and checked against it when present.
struct RunConfig {
  std::filesystem::path cube, labels, manifest;
  std::size_t pca_components = 16;

  model::MimConfig model;
  bool bands_given = false, classes_given = false;

  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 5e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t shard_size = 8;
  bool augment = false;

  std::filesystem::path output_dir = "run";
  std::filesystem::path checkpoint;  ///< empty: <output_dir>/checkpoint.mimc

  std::filesystem::path checkpoint_path() const;
  std::filesystem::path metrics_path() const { return output_dir / "metrics.csv"; }
  model::TrainOptions train_options() const;
};

/// Relative paths are resolved against `base_dir`. Throws UsageError on
/// unknown keys or malformed values.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical INI text; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);
bool same_run(const RunConfig& a, const RunConfig& b);

/// Input files must exist; the output directory must be creatable. Throws
/// DataError otherwise.
void validate_paths(const RunConfig& config);

/// Cube, labels and split read from disk and checked against each other.
struct Dataset {
  hsi::HsiCube cube;
  hsi::LabelMap labels;
  hsi::SplitManifest manifest;
};
Dataset load_dataset(const std::filesystem::path& cube, const std::filesystem::path& labels,
                     const std::filesystem::path& manifest);
/// Throws DataError when extents disagree or the manifest contradicts the labels.
void check_dataset(const Dataset& data);

/// Patches of `reduced` centred at the entries, labels shifted to 0-based.
std::vector<model::Sample> make_samples(const hsi::HsiCube& reduced,
                                        const std::vector<hsi::ManifestEntry>& entries,
                                        std::size_t patch);

struct TrainedRun {
  RunConfig config;  ///< with bands and classes resolved
  hsi::PcaModel pca;
  model::MimModel model;
  std::vector<model::EpochMetrics> history;
};

/// Fits PCA on the whole cube, trains on the manifest's train entries.
/// Throws DataError on a config/data mismatch.
TrainedRun train_run(const RunConfig& config, const Dataset& data,
                     std::function<void(const model::EpochMetrics&)> on_epoch = {});

model::Checkpoint make_checkpoint(const TrainedRun& run);
/// Rebuilds the run stored in a checkpoint. Throws DataError when records are
/// missing or shaped differently from the stored configuration.
TrainedRun restore_run(const model::Checkpoint& ckpt);

std::string format_metrics_log(const std::vector<model::EpochMetrics>& history);

struct Evaluation {
  std::vector<std::size_t> truth, predicted;  ///< 0-based
  std::vector<std::vector<std::size_t>> confusion;
  hsi::Metrics metrics;
};
/// Classifies the entries on the raw (un-reduced) cube. Throws DataError when
/// an entry's class exceeds the model's class count.
Evaluation evaluate(const TrainedRun& run, const hsi::HsiCube& raw_cube,
                    const std::vector<hsi::ManifestEntry>& entries);

/// 0-based prediction of every pixel, row-major.
std::vector<std::size_t> predict_pixels(const TrainedRun& run, const hsi::HsiCube& raw_cube);

/// Class k >= 1 is painted kPalette[(k - 1) % 16]; class 0 is black.
inline constexpr unsigned char kPalette[16][3] = {
    {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
    {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
    {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195}};
/// Binary P6 image of a row-major class map (0 = unlabeled).
std::string encode_ppm(std::size_t height, std::size_t width,
                       const std::vector<std::uint16_t>& classes);

std::string format_confusion(const std::vector<std::vector<std::size_t>>& confusion);

/// The synthetic end-to-end experiment: scene, PCA, split and model recipe.
struct Recipe {
  hsi::SynthOptions scene{.seed = 7};
  std::size_t train_per_class = 20;
  RunConfig run;  ///< data paths unused
};
Recipe default_recipe();

struct SyntheticData {
  hsi::SynthScene scene;
  Dataset dataset;
};
SyntheticData make_synthetic(const Recipe& recipe);

struct RecipeResult {
  std::string variant;
  std::uint64_t seed = 0;
  hsi::Metrics metrics;
};
/// Trains `run` (with the given seed) on the synthetic data and scores the test split.
RecipeResult run_recipe(const RunConfig& run, const Dataset& data, std::uint64_t seed,
                        std::string variant);

enum class AblationGrid { Components, Scans };
AblationGrid parse_grid(std::string_view name);
struct Variant {
  std::string name;
  RunConfig run;
};
/// Components: the 8 on/off combinations of STL, GDM and STF. Scans: every
/// design with 1..4 scan types.
std::vector<Variant> ablation_variants(AblationGrid grid, const RunConfig& base);
std::string format_ablation_csv(const std::vector<RecipeResult>& rows);

struct SuiteResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checks = 0;
  std::vector<std::string> failures;
  bool passed() const { return failures.empty(); }
};
/// Finite-difference suites: primitives, selective scan, tiny full model.
/// Throws UsageError on an unknown preset.
std::vector<SuiteResult> run_gradcheck_suites(const std::string& preset);

/// Full `mim` command line; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mim::cli
