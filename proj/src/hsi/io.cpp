#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mim/binary_io.hpp"
#include "mim/error.hpp"
#include "mim/hsi.hpp"

namespace mim {

namespace io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace io

namespace hsi {

namespace {
constexpr std::string_view kCubeMagic = "HSIC";
constexpr std::string_view kLabelMagic = "HSIL";

void check_magic(io::ByteReader& r, const std::string& bytes, std::string_view magic,
                 const char* what) {
  if (bytes.size() < magic.size() || r.bytes(magic.size()) != magic) {
    throw DataError(std::string(what) + ": bad magic (expected " + std::string(magic) + ")");
  }
}
}  // namespace

void HsiCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw DataError("cube: extents must be >= 1");
  if (data.size() != height * width * bands) throw DataError("cube: payload size mismatch");
  for (float v : data)
    if (!std::isfinite(v)) throw DataError("cube: non-finite value");
}

std::uint16_t LabelMap::max_class() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::string encode_cube(const HsiCube& cube) {
  cube.validate();
  io::ByteWriter w;
  w.bytes(kCubeMagic);
  w.u32(kCubeVersion);
  w.u32(static_cast<std::uint32_t>(cube.height));
  w.u32(static_cast<std::uint32_t>(cube.width));
  w.u32(static_cast<std::uint32_t>(cube.bands));
  for (float v : cube.data) w.f32(v);
  return w.take();
}

HsiCube decode_cube(const std::string& bytes) {
  io::ByteReader r(bytes, "cube");
  check_magic(r, bytes, kCubeMagic, "cube");
  const std::uint32_t version = r.u32();
  if (version != kCubeVersion) throw DataError("cube: unsupported version " + std::to_string(version));
  HsiCube c;
  c.height = r.u32();
  c.width = r.u32();
  c.bands = r.u32();
  const std::size_t n = c.height * c.width * c.bands;
  r.need(4 * n);
  c.data.resize(n);
  for (auto& v : c.data) v = r.f32();
  if (r.remaining() != 0) throw DataError("cube: trailing bytes after payload");
  c.validate();
  return c;
}

void save_cube(const std::filesystem::path& path, const HsiCube& cube) {
  io::write_file(path, encode_cube(cube));
}

HsiCube load_cube(const std::filesystem::path& path) { return decode_cube(io::read_file(path)); }

std::string encode_labels(const LabelMap& labels) {
  if (labels.labels.size() != labels.height * labels.width) {
    throw DataError("labels: payload size mismatch");
  }
  io::ByteWriter w;
  w.bytes(kLabelMagic);
  w.u32(static_cast<std::uint32_t>(labels.height));
  w.u32(static_cast<std::uint32_t>(labels.width));
  for (auto v : labels.labels) w.u16(v);
  return w.take();
}

LabelMap decode_labels(const std::string& bytes) {
  io::ByteReader r(bytes, "labels");
  check_magic(r, bytes, kLabelMagic, "labels");
  LabelMap m;
  m.height = r.u32();
  m.width = r.u32();
  const std::size_t n = m.height * m.width;
  r.need(2 * n);
  m.labels.resize(n);
  for (auto& v : m.labels) v = r.u16();
  if (r.remaining() != 0) throw DataError("labels: trailing bytes after payload");
  return m;
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  io::write_file(path, encode_labels(labels));
}

LabelMap load_labels(const std::filesystem::path& path) {
  return decode_labels(io::read_file(path));
}

std::vector<ManifestEntry> SplitManifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

void SplitManifest::validate(const LabelMap& labels) const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : entries) {
    if (e.row >= labels.height || e.col >= labels.width) {
      throw DataError("manifest: (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                      ") outside the label map");
    }
    if (e.label == 0 || labels.at(e.row, e.col) != e.label) {
      throw DataError("manifest: class of (" + std::to_string(e.row) + "," +
                      std::to_string(e.col) + ") disagrees with the label map");
    }
    if (!seen.insert({e.row, e.col}).second) {
      throw DataError("manifest: (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                      ") listed twice");
    }
  }
}

std::string encode_manifest(const SplitManifest& manifest) {
  std::ostringstream os;
  os << "# class row col split\n";
  for (const auto& e : manifest.entries) {
    os << e.label << ' ' << e.row << ' ' << e.col << ' '
       << (e.split == Split::Train ? "train" : "test") << '\n';
  }
  return os.str();
}

SplitManifest decode_manifest(const std::string& text) {
  SplitManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    long label = -1, row = -1, col = -1;
    std::string split, extra;
    if (!(fields >> label >> row >> col >> split) || (fields >> extra) || label < 1 ||
        label > 65535 || row < 0 || col < 0 || (split != "train" && split != "test")) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 'class row col split'");
    }
    m.entries.push_back({static_cast<std::uint16_t>(label), static_cast<std::size_t>(row),
                         static_cast<std::size_t>(col),
                         split == "train" ? Split::Train : Split::Test});
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const SplitManifest& manifest) {
  io::write_file(path, encode_manifest(manifest));
}

SplitManifest load_manifest(const std::filesystem::path& path) {
  return decode_manifest(io::read_file(path));
}

}  // namespace hsi
}  // namespace mim
