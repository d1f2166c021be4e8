#include "mim/checkpoint.hpp"

#include "mim/binary_io.hpp"
#include "mim/error.hpp"

namespace mim::model {

namespace {
constexpr std::string_view kMagic = "MIMC";
}

const NamedTensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  w.bytes(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw ShapeError("checkpoint record '" + t.name + "' shape does not match its payload");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw DataError("checkpoint: bad magic (expected MIMC)");
  }
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(c.version));
  }
  c.config = std::string(r.bytes(r.u32()));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    r.need(4ull * rank);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
    const std::size_t n = shape_numel(t.shape);
    r.need(8 * n);
    t.values.resize(n);
    for (auto& v : t.values) v = r.f64();
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes after last record");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace mim::model
