#pragma once

// Hyperspectral cubes, label maps, split manifests, PCA, patch cropping,
// synthetic scenes and classification metrics.
//
// File formats (little-endian):
//   cube     "HSIC", u32 version = 1, u32 H, W, C, f32 payload pixel-major
//   labels   "HSIL", u32 H, W, u16 payload row-major (0 = unlabeled)
//   manifest text, one "class row col split" record per line, '#' comments

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mim/tensor.hpp"

namespace mim::hsi {

inline constexpr std::uint32_t kCubeVersion = 1;

struct HsiCube {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> data;  ///< pixel-major: all bands of (0,0), then (0,1), ...

  float at(std::size_t row, std::size_t col, std::size_t band) const {
    return data[(row * width + col) * bands + band];
  }
  /// Throws DataError when extents and payload disagree or values are not finite.
  void validate() const;
  friend bool operator==(const HsiCube&, const HsiCube&) = default;
};

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint16_t> labels;  ///< row-major; 0 = unlabeled, 1..K classes

  std::uint16_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  std::uint16_t max_class() const;
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

enum class Split { Train, Test };

struct ManifestEntry {
  std::uint16_t label = 0;  ///< 1..K
  std::size_t row = 0, col = 0;
  Split split = Split::Train;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SplitManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split split) const;
  /// Throws DataError on overlapping train/test coordinates or entries that
  /// disagree with `labels`.
  void validate(const LabelMap& labels) const;
  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

std::string encode_cube(const HsiCube& cube);
HsiCube decode_cube(const std::string& bytes);
void save_cube(const std::filesystem::path& path, const HsiCube& cube);
HsiCube load_cube(const std::filesystem::path& path);

std::string encode_labels(const LabelMap& labels);
LabelMap decode_labels(const std::string& bytes);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path);

std::string encode_manifest(const SplitManifest& manifest);
SplitManifest decode_manifest(const std::string& text);
void save_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest load_manifest(const std::filesystem::path& path);

/// Principal-component projection fitted on a cube.
struct PcaModel {
  std::size_t input_bands = 0;
  std::vector<double> mean;         ///< [C]
  std::vector<double> components;   ///< [k x C], row i = i-th eigenvector
  std::vector<double> eigenvalues;  ///< [k], descending
  std::size_t numerical_rank = 0;   ///< eigenvalues above the rank tolerance
  std::size_t output_bands() const { return eigenvalues.size(); }
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// eigenvalues descending; eigenvectors as rows of `vectors` [n x n].
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};
SymmetricEigen jacobi_eigen(std::vector<double> matrix, std::size_t n);

/// Fits on every pixel of `cube`; keeps min(k, C, pixels) components, each
/// with its largest-magnitude loading positive. Writes a warning to stderr
/// when the covariance rank is below the kept count.
PcaModel pca_fit(const HsiCube& cube, std::size_t k);
/// Projected pixels [H*W x k] in f64.
std::vector<double> pca_transform(const PcaModel& pca, const HsiCube& cube);
/// pca_transform stored as an f32 cube.
HsiCube pca_apply(const PcaModel& pca, const HsiCube& cube);
HsiCube pca_reduce(const HsiCube& cube, std::size_t k);

/// Mirror index without repeating the edge; periodic extension of the mirror
/// for offsets larger than the extent.
std::size_t reflect_index(long index, std::size_t extent);

/// [p x p x C] window centred at (row, col) with reflection at the borders.
/// Throws std::invalid_argument for even p or out-of-range centres.
Tensor extract_patch(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t p);

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t height = 64, width = 64, bands = 32, classes = 4;
  std::size_t sites_per_class = 4;
  double noise_fraction = 0.05;  ///< noise sigma relative to the signature range
};

struct SynthScene {
  HsiCube cube;
  LabelMap labels;
  std::vector<std::vector<double>> signatures;  ///< [K][C]
  double noise_sigma = 0;
};

/// Voronoi label map with class signatures made of three Gaussian bumps.
/// Throws std::invalid_argument when classes < 2.
SynthScene synth_generate(const SynthOptions& options);

/// Samples `train_per_class` pixels of each class without replacement; the
/// rest become test. Throws DataError when a class has no pixel left for test.
SplitManifest make_split(const LabelMap& labels, std::size_t train_per_class, std::uint64_t seed);

struct Metrics {
  double oa = 0, aa = 0, kappa = 0;
  std::vector<double> per_class;        ///< NaN for classes without samples
  std::vector<std::size_t> empty_rows;  ///< classes excluded from AA
};

/// confusion[i][j] counts true class i predicted as j.
Metrics compute_metrics(const std::vector<std::vector<std::size_t>>& confusion);

std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<std::size_t>& truth,
                                                       const std::vector<std::size_t>& predicted,
                                                       std::size_t classes);

}  // namespace mim::hsi
