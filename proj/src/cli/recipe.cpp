#include <cstdio>

#include "mim/cli.hpp"
#include "mim/error.hpp"

namespace mim::cli {

Recipe default_recipe() {
  Recipe r;
  r.scene = hsi::SynthOptions{.seed = 7, .height = 64, .width = 64, .bands = 32, .classes = 4};
  r.train_per_class = 20;
  r.run.pca_components = 16;
  r.run.model.patch = 7;
  r.run.model.embed = 32;
  r.run.model.hidden = 32;
  r.run.model.depth = 1;
  r.run.epochs = 50;
  r.run.batch_size = 8;
  r.run.augment = true;
  return r;
}

SyntheticData make_synthetic(const Recipe& recipe) {
  SyntheticData out;
  out.scene = hsi::synth_generate(recipe.scene);
  out.dataset.cube = out.scene.cube;
  out.dataset.labels = out.scene.labels;
  out.dataset.manifest = hsi::make_split(out.scene.labels, recipe.train_per_class, recipe.scene.seed);
  return out;
}

RecipeResult run_recipe(const RunConfig& run, const Dataset& data, std::uint64_t seed,
                        std::string variant) {
  RunConfig cfg = run;
  cfg.seed = seed;
  const auto trained = train_run(cfg, data);
  const auto ev = evaluate(trained, data.cube, data.manifest.select(hsi::Split::Test));
  return {std::move(variant), seed, ev.metrics};
}

AblationGrid parse_grid(std::string_view name) {
  if (name == "components") return AblationGrid::Components;
  if (name == "scans") return AblationGrid::Scans;
  throw UsageError("unknown ablation grid '" + std::string(name) + "' (expected components|scans)");
}

std::vector<Variant> ablation_variants(AblationGrid grid, const RunConfig& base) {
  std::vector<Variant> out;
  if (grid == AblationGrid::Components) {
    // Bit 0 = STL, bit 1 = GDM, bit 2 = STF; all-off first, full last.
    for (unsigned mask = 0; mask < 8; ++mask) {
      RunConfig run = base;
      run.model.components = {.stl = (mask & 1u) != 0, .gdm = (mask & 2u) != 0, .stf = (mask & 4u) != 0};
      std::string name;
      const std::pair<bool, const char*> parts[] = {
          {run.model.components.stl, "stl"}, {run.model.components.gdm, "gdm"}, {run.model.components.stf, "stf"}};
      for (const auto& [on, label] : parts) {
        if (!on) continue;
        if (!name.empty()) name += "+";
        name += label;
      }
      out.push_back({name.empty() ? "none" : name, std::move(run)});
    }
    return out;
  }
  for (auto design : {scan::Design::Mamba, scan::Design::Raster, scan::Design::Diagonal,
                      scan::Design::Zigzag}) {
    for (std::size_t types = 1; types <= 4; ++types) {
      RunConfig run = base;
      run.model.design = design;
      run.model.scan_types = types;
      out.push_back({std::string(scan::design_name(design)) + "/" + std::to_string(types), std::move(run)});
    }
  }
  return out;
}

std::string format_ablation_csv(const std::vector<RecipeResult>& rows) {
  std::string out = "variant,seed,oa,aa,kappa\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%llu,%.6f,%.6f,%.6f\n", static_cast<unsigned long long>(r.seed),
                  r.metrics.oa, r.metrics.aa, r.metrics.kappa);
    out += r.variant;
    out += buf;
  }
  return out;
}

}  // namespace mim::cli
