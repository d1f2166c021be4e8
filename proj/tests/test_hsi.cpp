#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "mim/error.hpp"
#include "mim/hsi.hpp"

using namespace mim;
using namespace mim::hsi;

namespace {

HsiCube random_cube(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  HsiCube cube{h, w, c, std::vector<float>(h * w * c)};
  for (auto& v : cube.data) v = u(rng);
  return cube;
}

// Mixes a few latent spectra so the covariance has a clear spectrum.
HsiCube correlated_cube(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<double>> basis(4, std::vector<double>(c));
  for (auto& b : basis)
    for (auto& v : b) v = n(rng);
  HsiCube cube{h, w, c, std::vector<float>(h * w * c)};
  for (std::size_t i = 0; i < h * w; ++i) {
    const double scale[] = {3 * n(rng), 1.5 * n(rng), 0.7 * n(rng), 0.2 * n(rng)};
    for (std::size_t k = 0; k < c; ++k) {
      double v = 0.01 * n(rng);
      for (std::size_t b = 0; b < 4; ++b) v += scale[b] * basis[b][k];
      cube.data[i * c + k] = static_cast<float>(v);
    }
  }
  return cube;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(CubeFormat, RoundTripIsBitExact) {
  const auto cube = random_cube(5, 7, 3, 1);
  const auto path = temp_file("mim_test_cube.hsic");
  save_cube(path, cube);
  EXPECT_EQ(load_cube(path), cube);
  std::filesystem::remove(path);
}

TEST(CubeFormat, ByteLayout) {
  const HsiCube one{1, 1, 1, {2.5f}};
  const auto bytes = encode_cube(one);
  // magic, version, H, W, C, then one f32.
  EXPECT_EQ(bytes.size(), 20u + 4u);
  EXPECT_EQ(bytes.substr(0, 4), "HSIC");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  float v = 0;
  std::memcpy(&v, bytes.data() + 20, 4);
  EXPECT_EQ(v, 2.5f);
}

TEST(CubeFormat, RejectsCorruption) {
  const auto bytes = encode_cube(random_cube(2, 2, 2, 2));
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_cube(bad), DataError);
  try {
    decode_cube(bytes.substr(0, bytes.size() - 1));
    FAIL() << "truncated cube accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("payload short"), std::string::npos);
  }
  EXPECT_THROW(decode_cube(bytes + "x"), DataError);
  HsiCube nan_cube{1, 1, 1, {std::nanf("")}};
  EXPECT_THROW(nan_cube.validate(), DataError);
  EXPECT_THROW(decode_cube(encode_cube(nan_cube)), DataError);
  EXPECT_THROW(load_cube("/nonexistent/cube.hsic"), DataError);
}

TEST(LabelFormat, RoundTripAndLayout) {
  LabelMap labels{2, 3, {0, 1, 2, 3, 65535, 1}};
  const auto bytes = encode_labels(labels);
  EXPECT_EQ(bytes.substr(0, 4), "HSIL");
  EXPECT_EQ(bytes.size(), 12u + 12u);
  EXPECT_EQ(decode_labels(bytes), labels);
  EXPECT_EQ(labels.max_class(), 65535);
  EXPECT_THROW(decode_labels(bytes.substr(0, 20)), DataError);
  auto bad = bytes;
  bad[3] = 'C';
  EXPECT_THROW(decode_labels(bad), DataError);
}

TEST(ManifestFormat, RoundTripAndValidation) {
  LabelMap labels{2, 2, {1, 2, 0, 1}};
  SplitManifest m{{{1, 0, 0, Split::Train}, {2, 0, 1, Split::Test}, {1, 1, 1, Split::Test}}};
  const auto text = encode_manifest(m);
  EXPECT_EQ(decode_manifest(text), m);
  EXPECT_EQ(decode_manifest("# comment\n\n" + text), m);
  m.validate(labels);
  EXPECT_EQ(m.select(Split::Test).size(), 2u);

  SplitManifest overlap{{{1, 0, 0, Split::Train}, {1, 0, 0, Split::Test}}};
  EXPECT_THROW(overlap.validate(labels), DataError);
  SplitManifest wrong_class{{{2, 0, 0, Split::Train}}};
  EXPECT_THROW(wrong_class.validate(labels), DataError);
  SplitManifest outside{{{1, 5, 0, Split::Train}}};
  EXPECT_THROW(outside.validate(labels), DataError);
  EXPECT_THROW(decode_manifest("1 0 0 validation\n"), DataError);
  EXPECT_THROW(decode_manifest("1 0\n"), DataError);
}

TEST(Jacobi, MatchesEigenSolver) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (std::size_t dim : {1u, 2u, 5u, 12u}) {
    Eigen::MatrixXd a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = n(rng);
    std::vector<double> flat(dim * dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) flat[i * dim + j] = a(i, j);
    const auto mine = jacobi_eigen(flat, dim);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);
    for (std::size_t k = 0; k < dim; ++k) {
      EXPECT_NEAR(mine.values[k], ref.eigenvalues()(Eigen::Index(dim - 1 - k)), 1e-10);
      // A v = lambda v for every returned row.
      Eigen::VectorXd v(dim);
      for (std::size_t c = 0; c < dim; ++c) v(Eigen::Index(c)) = mine.vectors[k * dim + c];
      EXPECT_NEAR((a * v - mine.values[k] * v).norm(), 0.0, 1e-9);
      EXPECT_NEAR(v.norm(), 1.0, 1e-12);
    }
  }
}

TEST(Pca, MatchesDirectCovarianceDecomposition) {
  const auto cube = correlated_cube(12, 10, 8, 4);
  const auto pca = pca_fit(cube, 5);
  ASSERT_EQ(pca.output_bands(), 5u);
  const std::size_t P = 120, C = 8;
  Eigen::MatrixXd x(P, C);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < C; ++c) x(Eigen::Index(i), Eigen::Index(c)) = cube.data[i * C + c];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred / double(P);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(cov);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(pca.eigenvalues[k], ref.eigenvalues()(Eigen::Index(C - 1 - k)), 1e-8);
    Eigen::VectorXd v = ref.eigenvectors().col(Eigen::Index(C - 1 - k));
    Eigen::Index peak;
    v.cwiseAbs().maxCoeff(&peak);
    if (v(peak) < 0) v = -v;
    for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(pca.components[k * C + c], v(Eigen::Index(c)), 1e-8);
  }
  // Projected variance per component equals its eigenvalue.
  const auto proj = pca_transform(pca, cube);
  for (std::size_t k = 0; k < 5; ++k) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < P; ++i) mu += proj[i * 5 + k] / double(P);
    for (std::size_t i = 0; i < P; ++i) var += std::pow(proj[i * 5 + k] - mu, 2) / double(P);
    EXPECT_NEAR(mu, 0.0, 1e-8);
    EXPECT_NEAR(var, pca.eigenvalues[k], 1e-8);
  }
}

TEST(Pca, FullBasisReconstructsCentredData) {
  const auto cube = random_cube(6, 6, 5, 5);
  const auto pca = pca_fit(cube, 10);
  ASSERT_EQ(pca.output_bands(), 5u);
  const auto proj = pca_transform(pca, cube);
  for (std::size_t i = 0; i < 36; ++i)
    for (std::size_t c = 0; c < 5; ++c) {
      double rec = pca.mean[c];
      for (std::size_t k = 0; k < 5; ++k) rec += proj[i * 5 + k] * pca.components[k * 5 + c];
      EXPECT_NEAR(rec, cube.data[i * 5 + c], 1e-8);
    }
}

TEST(Pca, RankOneData) {
  HsiCube cube{4, 4, 6, {}};
  const double spectrum[] = {1, 2, 0.5, -1, 3, 0.25};
  for (std::size_t i = 0; i < 16; ++i)
    for (double s : spectrum) cube.data.push_back(static_cast<float>(s * (0.5 + 0.125 * double(i))));
  const auto pca = pca_fit(cube, 3);
  EXPECT_EQ(pca.numerical_rank, 1u);
  EXPECT_EQ(pca.output_bands(), 3u);
  const double total = pca.eigenvalues[0] + pca.eigenvalues[1] + pca.eigenvalues[2];
  EXPECT_GT(pca.eigenvalues[0] / total, 1 - 1e-9);
}

TEST(Pca, KeepsAtMostPixelCountAndIgnoresPixelOrder) {
  const auto small = random_cube(1, 3, 6, 6);
  EXPECT_EQ(pca_fit(small, 6).output_bands(), 3u);
  EXPECT_THROW(pca_fit(small, 0), std::invalid_argument);

  const auto cube = correlated_cube(8, 8, 6, 7);
  auto shuffled = cube;
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(8);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < 64; ++i)
    std::copy_n(cube.data.begin() + std::ptrdiff_t(order[i] * 6), 6, shuffled.data.begin() + std::ptrdiff_t(i * 6));
  const auto a = pca_fit(cube, 4), b = pca_fit(shuffled, 4);
  for (std::size_t i = 0; i < a.components.size(); ++i) EXPECT_NEAR(a.components[i], b.components[i], 1e-8);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.eigenvalues[i], b.eigenvalues[i], 1e-8);
  const auto reduced = pca_reduce(cube, 4);
  EXPECT_EQ(reduced.bands, 4u);
  EXPECT_THROW(pca_apply(a, random_cube(2, 2, 5, 9)), DataError);
}

TEST(Patch, ReflectIndex) {
  EXPECT_EQ(reflect_index(-1, 5), 1u);
  EXPECT_EQ(reflect_index(-2, 5), 2u);
  EXPECT_EQ(reflect_index(5, 5), 3u);
  EXPECT_EQ(reflect_index(6, 5), 2u);
  EXPECT_EQ(reflect_index(3, 5), 3u);
  EXPECT_EQ(reflect_index(-3, 2), 1u);
  EXPECT_EQ(reflect_index(-7, 1), 0u);
  for (long i = -20; i < 20; ++i) EXPECT_LT(reflect_index(i, 3), 3u);
}

TEST(Patch, InteriorCornerAndSinglePixel) {
  const auto cube = random_cube(5, 6, 2, 10);
  const auto inner = extract_patch(cube, 2, 3, 3);
  EXPECT_EQ(inner.shape(), (Shape{3, 3, 2}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t b = 0; b < 2; ++b) EXPECT_EQ(inner.at({r, c, b}), cube.at(1 + r, 2 + c, b));

  const auto corner = extract_patch(cube, 0, 0, 3);
  const std::size_t idx[] = {1, 0, 1};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(corner.at({r, c, 0}), cube.at(idx[r], idx[c], 0));

  const auto single = extract_patch(cube, 4, 5, 1);
  EXPECT_EQ(single.to_vector(), (std::vector<double>{cube.at(4, 5, 0), cube.at(4, 5, 1)}));
  EXPECT_THROW(extract_patch(cube, 0, 0, 4), std::invalid_argument);
  EXPECT_THROW(extract_patch(cube, 5, 0, 3), std::invalid_argument);
}

TEST(Patch, CentreAlwaysMatchesSourcePixel) {
  const auto cube = random_cube(4, 3, 1, 11);
  for (std::size_t p : {1u, 3u, 7u, 11u})
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto patch = extract_patch(cube, r, c, p);
        EXPECT_EQ(patch.at({p / 2, p / 2, 0}), cube.at(r, c, 0));
      }
}

TEST(Synth, DeterministicAndNoiseFree) {
  SynthOptions o{.seed = 3, .height = 20, .width = 24, .bands = 10, .classes = 3};
  const auto a = synth_generate(o), b = synth_generate(o);
  EXPECT_EQ(a.cube, b.cube);
  EXPECT_EQ(a.labels, b.labels);
  o.seed = 4;
  EXPECT_NE(synth_generate(o).cube, a.cube);

  o.noise_fraction = 0;
  const auto clean = synth_generate(o);
  for (std::size_t i = 0; i < 20 * 24; ++i) {
    const auto k = clean.labels.labels[i];
    ASSERT_GE(k, 1);
    for (std::size_t c = 0; c < 10; ++c)
      EXPECT_FLOAT_EQ(clean.cube.data[i * 10 + c], static_cast<float>(clean.signatures[k - 1][c]));
  }
  EXPECT_THROW(synth_generate({.classes = 1}), std::invalid_argument);
}

TEST(Synth, EveryClassPresentOnDefaultScene) {
  const auto s = synth_generate({.seed = 7});
  std::set<std::uint16_t> seen(s.labels.labels.begin(), s.labels.labels.end());
  EXPECT_EQ(seen, (std::set<std::uint16_t>{1, 2, 3, 4}));
}

TEST(Synth, SignaturesAreWellSeparated) {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = synth_generate({.seed = seed, .height = 8, .width = 8});
    bool separated = true;
    for (std::size_t i = 0; i < s.signatures.size(); ++i)
      for (std::size_t j = i + 1; j < s.signatures.size(); ++j) {
        double d = 0;
        for (std::size_t c = 0; c < s.signatures[i].size(); ++c) d += std::pow(s.signatures[i][c] - s.signatures[j][c], 2);
        separated = separated && std::sqrt(d) > 10 * s.noise_sigma;
      }
    good += separated;
  }
  EXPECT_GE(good, 95);
}

TEST(Split, CountsDisjointAndExhaustive) {
  const auto s = synth_generate({.seed = 1, .height = 30, .width = 30, .classes = 3});
  const auto m = make_split(s.labels, 10, 5);
  EXPECT_EQ(m, make_split(s.labels, 10, 5));
  m.validate(s.labels);
  std::vector<std::size_t> train(4, 0);
  std::set<std::pair<std::size_t, std::size_t>> all;
  for (const auto& e : m.entries) {
    if (e.split == Split::Train) ++train[e.label];
    EXPECT_TRUE(all.insert({e.row, e.col}).second);
    EXPECT_EQ(s.labels.at(e.row, e.col), e.label);
  }
  EXPECT_EQ(train[1], 10u);
  EXPECT_EQ(train[2], 10u);
  EXPECT_EQ(train[3], 10u);
  EXPECT_EQ(all.size(), 900u);
}

TEST(Split, NeedsPixelsLeftForTest) {
  LabelMap labels{1, 4, {1, 1, 2, 2}};
  EXPECT_THROW(make_split(labels, 2, 0), DataError);
  EXPECT_NO_THROW(make_split(labels, 1, 0));
  EXPECT_THROW(make_split(LabelMap{1, 2, {0, 0}}, 1, 0), DataError);
}

TEST(Metrics, PerfectDiagonal) {
  const auto m = compute_metrics({{50, 0}, {0, 50}});
  EXPECT_DOUBLE_EQ(m.oa, 1.0);
  EXPECT_DOUBLE_EQ(m.aa, 1.0);
  EXPECT_DOUBLE_EQ(m.kappa, 1.0);
}

TEST(Metrics, ChanceAgreement) {
  const auto m = compute_metrics({{25, 25}, {25, 25}});
  EXPECT_DOUBLE_EQ(m.oa, 0.5);
  EXPECT_NEAR(m.kappa, 0.0, 1e-15);
}

TEST(Metrics, HandEvaluatedKappa) {
  const auto m = compute_metrics({{40, 10}, {20, 30}});
  EXPECT_NEAR(m.oa, 0.7, 1e-12);
  EXPECT_NEAR(m.aa, 0.7, 1e-12);
  EXPECT_NEAR(m.kappa, 0.4, 1e-12);
  EXPECT_NEAR(m.per_class[0], 0.8, 1e-12);
  EXPECT_NEAR(m.per_class[1], 0.6, 1e-12);
}

TEST(Metrics, EmptyRowExcludedFromAverage) {
  const auto m = compute_metrics({{8, 2, 0}, {0, 0, 0}, {1, 0, 9}});
  EXPECT_EQ(m.empty_rows, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(std::isnan(m.per_class[1]));
  EXPECT_NEAR(m.aa, 0.85, 1e-12);
  EXPECT_THROW(compute_metrics({{0, 0}, {0, 0}}), std::invalid_argument);
}

TEST(Metrics, KappaNeverExceedsOverallAccuracy) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> u(0, 30);
  for (int k = 0; k < 500; ++k) {
    const std::size_t K = 2 + k % 5;
    std::vector<std::vector<std::size_t>> c(K, std::vector<std::size_t>(K));
    for (auto& row : c)
      for (auto& v : row) v = u(rng);
    c[0][0] += 1;
    const auto m = compute_metrics(c);
    EXPECT_LE(m.kappa, m.oa + 1e-12);
  }
}

TEST(Metrics, ConfusionMatrixCounts) {
  const auto c = confusion_matrix({0, 0, 1, 2, 2}, {0, 1, 1, 2, 0}, 3);
  EXPECT_EQ(c, (std::vector<std::vector<std::size_t>>{{1, 1, 0}, {0, 1, 0}, {1, 0, 1}}));
  EXPECT_THROW(confusion_matrix({0}, {3}, 3), std::invalid_argument);
  EXPECT_THROW(confusion_matrix({0, 1}, {0}, 3), std::invalid_argument);
}
