#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mim/error.hpp"
#include "mim/hsi.hpp"

namespace mim::hsi {

SynthScene synth_generate(const SynthOptions& o) {
  if (o.classes < 2) throw std::invalid_argument("synth: need K >= 2 classes");
  if (o.height == 0 || o.width == 0 || o.bands == 0) {
    throw std::invalid_argument("synth: extents must be >= 1");
  }
  if (o.classes > 65535) throw std::invalid_argument("synth: too many classes");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t n_sites = o.classes * std::max<std::size_t>(1, o.sites_per_class);
  std::vector<std::pair<double, double>> sites(n_sites);
  for (auto& s : sites) s = {unit(rng) * o.height, unit(rng) * o.width};

  SynthScene scene;
  const double C = static_cast<double>(o.bands);
  scene.signatures.assign(o.classes, std::vector<double>(o.bands, 0.0));
  for (auto& sig : scene.signatures) {
    for (int bump = 0; bump < 3; ++bump) {
      const double amplitude = 0.5 + unit(rng);
      const double centre = unit(rng) * (C - 1);
      const double width = C / 12.0 + unit(rng) * (C / 6.0);
      for (std::size_t b = 0; b < o.bands; ++b) {
        const double u = (static_cast<double>(b) - centre) / width;
        sig[b] += amplitude * std::exp(-0.5 * u * u);
      }
    }
  }
  double lo = scene.signatures[0][0], hi = lo;
  for (const auto& sig : scene.signatures)
    for (double v : sig) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  scene.noise_sigma = o.noise_fraction * (hi - lo);

  scene.labels.height = o.height;
  scene.labels.width = o.width;
  scene.labels.labels.resize(o.height * o.width);
  scene.cube.height = o.height;
  scene.cube.width = o.width;
  scene.cube.bands = o.bands;
  scene.cube.data.resize(o.height * o.width * o.bands);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t r = 0; r < o.height; ++r)
    for (std::size_t c = 0; c < o.width; ++c) {
      const double y = r + 0.5, x = c + 0.5;
      std::size_t nearest = 0;
      double best = -1;
      for (std::size_t s = 0; s < n_sites; ++s) {
        const double dy = y - sites[s].first, dx = x - sites[s].second;
        const double d = dy * dy + dx * dx;
        if (best < 0 || d < best) {
          best = d;
          nearest = s;
        }
      }
      const std::size_t cls = nearest % o.classes;
      scene.labels.labels[r * o.width + c] = static_cast<std::uint16_t>(cls + 1);
      float* px = scene.cube.data.data() + (r * o.width + c) * o.bands;
      for (std::size_t b = 0; b < o.bands; ++b) {
        const double n = scene.noise_sigma > 0 ? scene.noise_sigma * noise(rng) : 0.0;
        px[b] = static_cast<float>(scene.signatures[cls][b] + n);
      }
    }
  return scene;
}

SplitManifest make_split(const LabelMap& labels, std::size_t train_per_class, std::uint64_t seed) {
  const std::size_t K = labels.max_class();
  if (K == 0) throw DataError("make_split: label map has no labeled pixels");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pixels(K + 1);
  for (std::size_t r = 0; r < labels.height; ++r)
    for (std::size_t c = 0; c < labels.width; ++c)
      if (auto l = labels.at(r, c); l != 0) pixels[l].push_back({r, c});

  std::mt19937_64 rng(seed);
  SplitManifest m;
  for (std::size_t k = 1; k <= K; ++k) {
    auto& cls = pixels[k];
    if (cls.size() <= train_per_class) {
      throw DataError("make_split: class " + std::to_string(k) + " has " +
                      std::to_string(cls.size()) + " labeled pixels, need more than " +
                      std::to_string(train_per_class) + " to leave a test set");
    }
    std::vector<bool> is_train(cls.size(), false);
    // Partial Fisher-Yates over indices picks the training subset.
    std::vector<std::size_t> idx(cls.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < train_per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      is_train[idx[i]] = true;
    }
    for (std::size_t i = 0; i < cls.size(); ++i) {
      m.entries.push_back({static_cast<std::uint16_t>(k), cls[i].first, cls[i].second,
                           is_train[i] ? Split::Train : Split::Test});
    }
  }
  return m;
}

}  // namespace mim::hsi
