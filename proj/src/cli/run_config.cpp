#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "mim/cli.hpp"
#include "mim/error.hpp"

namespace mim::cli {
namespace {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data", {"cube", "labels", "manifest", "pca_components"}},
      {"model",
       {"patch", "bands", "embed", "hidden", "states", "conv_width", "depth", "classes", "design",
        "scan_types", "fusion", "cascade", "stl", "gdm", "stf", "scan_mode"}},
      {"train", {"epochs", "batch_size", "lr", "weight_decay", "seed", "threads", "shard_size", "augment"}},
      {"output", {"dir", "checkpoint"}},
  };
  return keys;
}

std::string where(const std::string& section, const std::string& key) {
  return "config [" + section + "] " + key;
}

std::uint64_t parse_unsigned(const std::string& text, const std::string& at) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty()) {
    throw UsageError(at + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& text, const std::string& at) {
  double v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty() || !std::isfinite(v)) {
    throw UsageError(at + ": expected a finite number, got '" + text + "'");
  }
  return v;
}

bool parse_flag(const std::string& text, const std::string& at) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw UsageError(at + ": expected true|false, got '" + text + "'");
}

fs::path resolve(const std::string& text, const fs::path& base) {
  if (text.empty()) return {};
  fs::path p(text);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

std::string real_text(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? output_dir / "checkpoint.mimc" : checkpoint;
}

model::TrainOptions RunConfig::train_options() const {
  model::TrainOptions o;
  o.epochs = epochs;
  o.batch_size = batch_size;
  o.optimizer.lr = lr;
  o.optimizer.weight_decay = weight_decay;
  o.seed = seed;
  o.threads = threads;
  o.shard_size = shard_size;
  o.augment = augment;
  return o;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  RunConfig c;
  for (const auto& [section, entries] : tree) {
    const auto known = known_keys().find(section);
    if (known == known_keys().end()) {
      if (entries.empty() && !entries.data().empty()) {
        throw UsageError("config: key '" + section + "' outside a section");
      }
      throw UsageError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, node] : entries) {
      if (!known->second.contains(key)) {
        throw UsageError("config: unknown key '" + key + "' in section [" + section + "]");
      }
      const std::string value = node.get_value<std::string>();
      const std::string at = where(section, key);
      auto count = [&] { return static_cast<std::size_t>(parse_unsigned(value, at)); };

      if (section == "data") {
        if (key == "cube") c.cube = resolve(value, base_dir);
        else if (key == "labels") c.labels = resolve(value, base_dir);
        else if (key == "manifest") c.manifest = resolve(value, base_dir);
        else if (key == "pca_components") c.pca_components = count();
      } else if (section == "model") {
        auto& m = c.model;
        if (key == "patch") m.patch = count();
        else if (key == "bands") m.bands = count(), c.bands_given = true;
        else if (key == "embed") m.embed = count();
        else if (key == "hidden") m.hidden = count();
        else if (key == "states") m.states = count();
        else if (key == "conv_width") m.conv_width = count();
        else if (key == "depth") m.depth = count();
        else if (key == "classes") m.classes = count(), c.classes_given = true;
        else if (key == "design") m.design = scan::parse_design(value);
        else if (key == "scan_types") m.scan_types = count();
        else if (key == "fusion") m.fusion = tmamba::parse_fusion(value);
        else if (key == "cascade") m.cascade = model::parse_cascade(value);
        else if (key == "stl") m.components.stl = parse_flag(value, at);
        else if (key == "gdm") m.components.gdm = parse_flag(value, at);
        else if (key == "stf") m.components.stf = parse_flag(value, at);
        else if (key == "scan_mode") m.scan_mode = ssm::parse_scan_mode(value);
      } else if (section == "train") {
        if (key == "epochs") c.epochs = count();
        else if (key == "batch_size") c.batch_size = count();
        else if (key == "lr") c.lr = parse_real(value, at);
        else if (key == "weight_decay") c.weight_decay = parse_real(value, at);
        else if (key == "seed") c.seed = parse_unsigned(value, at);
        else if (key == "threads") c.threads = count();
        else if (key == "shard_size") c.shard_size = count();
        else if (key == "augment") c.augment = parse_flag(value, at);
      } else if (section == "output") {
        if (key == "dir") c.output_dir = resolve(value, base_dir);
        else if (key == "checkpoint") c.checkpoint = resolve(value, base_dir);
      }
    }
  }
  if (c.output_dir.is_relative() && !base_dir.empty() && !tree.get_child_optional("output.dir")) {
    c.output_dir = resolve(c.output_dir.string(), base_dir);
  }
  if (c.batch_size == 0) throw UsageError("config [train] batch_size must be >= 1");
  if (c.threads == 0) throw UsageError("config [train] threads must be >= 1");
  if (c.shard_size == 0) throw UsageError("config [train] shard_size must be >= 1");
  if (c.pca_components == 0) throw UsageError("config [data] pca_components must be >= 1");
  if (c.lr <= 0) throw UsageError("config [train] lr must be positive");
  if (c.weight_decay < 0) throw UsageError("config [train] weight_decay must be >= 0");
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

std::string format_run_config(const RunConfig& c) {
  const auto& m = c.model;
  auto flag = [](bool b) { return b ? "true" : "false"; };
  std::ostringstream o;
  o << "[data]\n"
    << "cube = " << c.cube.string() << "\n"
    << "labels = " << c.labels.string() << "\n"
    << "manifest = " << c.manifest.string() << "\n"
    << "pca_components = " << c.pca_components << "\n\n"
    << "[model]\n"
    << "patch = " << m.patch << "\n";
  if (c.bands_given) o << "bands = " << m.bands << "\n";
  o << "embed = " << m.embed << "\n"
    << "hidden = " << m.hidden << "\n"
    << "states = " << m.states << "\n"
    << "conv_width = " << m.conv_width << "\n"
    << "depth = " << m.depth << "\n";
  if (c.classes_given) o << "classes = " << m.classes << "\n";
  o << "design = " << scan::design_name(m.design) << "\n"
    << "scan_types = " << m.scan_types << "\n"
    << "fusion = " << tmamba::fusion_name(m.fusion) << "\n"
    << "cascade = " << model::cascade_name(m.cascade) << "\n"
    << "stl = " << flag(m.components.stl) << "\n"
    << "gdm = " << flag(m.components.gdm) << "\n"
    << "stf = " << flag(m.components.stf) << "\n"
    << "scan_mode = " << ssm::scan_mode_name(m.scan_mode) << "\n\n"
    << "[train]\n"
    << "epochs = " << c.epochs << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "lr = " << real_text(c.lr) << "\n"
    << "weight_decay = " << real_text(c.weight_decay) << "\n"
    << "seed = " << c.seed << "\n"
    << "threads = " << c.threads << "\n"
    << "shard_size = " << c.shard_size << "\n"
    << "augment = " << flag(c.augment) << "\n\n"
    << "[output]\n"
    << "dir = " << c.output_dir.string() << "\n";
  if (!c.checkpoint.empty()) o << "checkpoint = " << c.checkpoint.string() << "\n";
  return o.str();
}

bool same_run(const RunConfig& a, const RunConfig& b) {
  return format_run_config(a) == format_run_config(b);
}

void validate_paths(const RunConfig& c) {
  const std::pair<const char*, const fs::path*> inputs[] = {
      {"cube", &c.cube}, {"labels", &c.labels}, {"manifest", &c.manifest}};
  for (const auto& [name, path] : inputs) {
    if (path->empty()) throw DataError(std::string("config [data] ") + name + " is not set");
    if (!fs::is_regular_file(*path)) {
      throw DataError(std::string("config [data] ") + name + ": no such file " + path->string());
    }
  }
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec || !fs::is_directory(c.output_dir)) {
    throw DataError("config [output] dir: cannot create " + c.output_dir.string());
  }
  const auto ckpt_dir = c.checkpoint_path().parent_path();
  if (!ckpt_dir.empty() && !fs::is_directory(ckpt_dir)) {
    throw DataError("config [output] checkpoint: directory " + ckpt_dir.string() + " does not exist");
  }
}

}  // namespace mim::cli
