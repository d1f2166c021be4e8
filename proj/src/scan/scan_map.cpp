#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "mim/error.hpp"
#include "mim/ops.hpp"
#include "mim/scan.hpp"

namespace mim::scan {

namespace {

void check_side(std::size_t p) {
  if (p == 0 || p % 2 == 0) {
    throw std::invalid_argument("scan side must be odd and positive, got " + std::to_string(p));
  }
}

void check_type(int type_id) {
  if (type_id < 1 || type_id > 4) {
    throw std::invalid_argument("scan type must be 1..4, got " + std::to_string(type_id));
  }
}

std::vector<Cell> canonical(std::size_t p, Design design) {
  std::vector<Cell> out;
  out.reserve(p * p);
  switch (design) {
    case Design::Mamba:
      for (std::size_t r = 0; r < p; ++r)
        for (std::size_t k = 0; k < p; ++k) out.push_back({r, r % 2 == 0 ? k : p - 1 - k});
      break;
    case Design::Raster:
      for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = 0; c < p; ++c) out.push_back({r, c});
      break;
    case Design::Diagonal:
    case Design::Zigzag:
      for (std::size_t s = 0; s + 1 < 2 * p; ++s) {
        const std::size_t lo = s >= p ? s - (p - 1) : 0;
        const std::size_t hi = std::min(s, p - 1);
        const bool descending = design == Design::Zigzag && s % 2 == 0;
        for (std::size_t k = 0; k <= hi - lo; ++k) {
          const std::size_t r = descending ? hi - k : lo + k;
          out.push_back({r, s - r});
        }
      }
      break;
  }
  return out;
}

std::vector<Cell> transposed(std::vector<Cell> cells) {
  for (auto& c : cells) std::swap(c.row, c.col);
  return cells;
}

std::vector<Cell> flip_columns(std::vector<Cell> cells, std::size_t p) {
  for (auto& c : cells) c.col = p - 1 - c.col;
  return cells;
}

std::vector<Cell> oriented(std::size_t p, Design design, int type_id) {
  auto base = canonical(p, design);
  switch (type_id) {
    case 1: return base;
    case 2: return transposed(std::move(base));
    case 3: return flip_columns(transposed(std::move(base)), p);
    default: return flip_columns(std::move(base), p);
  }
}

}  // namespace

std::string_view design_name(Design d) {
  switch (d) {
    case Design::Mamba: return "mamba";
    case Design::Raster: return "raster";
    case Design::Diagonal: return "diagonal";
    case Design::Zigzag: return "zigzag";
  }
  return "unknown";
}

Design parse_design(std::string_view name) {
  if (name == "mamba") return Design::Mamba;
  if (name == "raster") return Design::Raster;
  if (name == "diagonal") return Design::Diagonal;
  if (name == "zigzag") return Design::Zigzag;
  throw UsageError("unknown scan design '" + std::string(name) +
                   "' (expected mamba|raster|diagonal|zigzag)");
}

ScanMap::ScanMap(std::size_t p, Design design, int type_id, std::vector<Cell> order)
    : p_(p), design_(design), type_id_(type_id), order_(std::move(order)) {
  if (order_.size() != p * p) throw std::invalid_argument("scan order length must be p^2");
  std::vector<bool> seen(p * p, false);
  for (const auto& c : order_) {
    if (c.row >= p || c.col >= p || seen[c.row * p + c.col]) {
      throw std::invalid_argument("scan order is not a bijection onto the patch");
    }
    seen[c.row * p + c.col] = true;
  }
}

std::vector<std::size_t> ScanMap::flat_order() const {
  std::vector<std::size_t> out(order_.size());
  for (std::size_t k = 0; k < order_.size(); ++k) out[k] = order_[k].row * p_ + order_[k].col;
  return out;
}

std::vector<std::size_t> ScanMap::inverse() const {
  std::vector<std::size_t> inv(order_.size());
  for (std::size_t k = 0; k < order_.size(); ++k) inv[order_[k].row * p_ + order_[k].col] = k;
  return inv;
}

ScanMap mcs_map(std::size_t p, int type_id) {
  check_side(p);
  check_type(type_id);
  return ScanMap(p, Design::Mamba, type_id, oriented(p, Design::Mamba, type_id));
}

ScanMap alt_scan_map(std::size_t p, Design design, int type_id) {
  check_side(p);
  check_type(type_id);
  if (design == Design::Mamba) {
    throw std::invalid_argument("alt_scan_map covers raster|diagonal|zigzag only");
  }
  return ScanMap(p, design, type_id, oriented(p, design, type_id));
}

ScanMap make_scan_map(std::size_t p, Design design, int type_id) {
  return design == Design::Mamba ? mcs_map(p, type_id) : alt_scan_map(p, design, type_id);
}

SplitMaps split_center(const ScanMap& map) {
  const std::size_t L = map.length();
  const std::size_t mid = (L - 1) / 2;
  const std::size_t c = (map.side() - 1) / 2;
  if (map[mid] != Cell{c, c}) {
    throw std::invalid_argument("split_center: middle step of the scan is not the patch centre");
  }
  SplitMaps s;
  const auto& o = map.order();
  s.forward.assign(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(mid) + 1);
  s.backward.assign(o.rbegin(), o.rbegin() + static_cast<std::ptrdiff_t>(L - mid));
  return s;
}

SplitIndices split_indices(std::size_t length) {
  if (length % 2 == 0) throw std::invalid_argument("split_indices: length must be odd");
  const std::size_t T = (length - 1) / 2;
  SplitIndices s;
  for (std::size_t k = 0; k <= T; ++k) s.forward.push_back(k);
  for (std::size_t k = length; k-- > T;) s.backward.push_back(k);
  return s;
}

Tensor gather_by_cells(const Tensor& patch, const std::vector<Cell>& cells) {
  if (patch.rank() != 3 || patch.dim(0) != patch.dim(1)) {
    throw ShapeError("gather expects a [p x p x D] patch, got " + shape_str(patch.shape()));
  }
  const std::size_t p = patch.dim(0), D = patch.dim(2);
  std::vector<std::size_t> rows;
  rows.reserve(cells.size());
  for (const auto& c : cells) {
    if (c.row >= p || c.col >= p) throw ShapeError("gather: cell outside the patch");
    rows.push_back(c.row * p + c.col);
  }
  return index_select(reshape(patch, {p * p, D}), rows);
}

Tensor gather_by_map(const Tensor& patch, const ScanMap& map) {
  if (patch.rank() != 3 || patch.dim(0) != map.side()) {
    throw ShapeError("gather_by_map: patch " + shape_str(patch.shape()) + " vs scan side " +
                     std::to_string(map.side()));
  }
  return gather_by_cells(patch, map.order());
}

Tensor scatter_by_map(const Tensor& seq, const ScanMap& map) {
  const std::size_t p = map.side();
  if (seq.rank() != 2 || seq.dim(0) != p * p) {
    throw ShapeError("scatter_by_map: sequence " + shape_str(seq.shape()) + " vs scan side " +
                     std::to_string(p));
  }
  const auto inv = map.inverse();
  return reshape(index_select(seq, inv), {p, p, seq.dim(1)});
}

ContinuityStats continuity_stats(const ScanMap& map) {
  ContinuityStats s;
  const auto& o = map.order();
  if (o.size() < 2) return s;
  double total = 0;
  for (std::size_t k = 1; k < o.size(); ++k) {
    const auto dr = std::abs(static_cast<long>(o[k].row) - static_cast<long>(o[k - 1].row));
    const auto dc = std::abs(static_cast<long>(o[k].col) - static_cast<long>(o[k - 1].col));
    const auto dist = dr + dc;
    if (dist > 1) ++s.n_jumps;
    total += static_cast<double>(dist);
  }
  s.mean_step_distance = total / static_cast<double>(o.size() - 1);
  return s;
}

std::string dump(const ScanMap& map) {
  std::ostringstream os;
  for (std::size_t k = 0; k < map.length(); ++k) {
    os << k << ' ' << map[k].row << ' ' << map[k].col << '\n';
  }
  const auto st = continuity_stats(map);
  os << "# design=" << design_name(map.design()) << " type=" << map.type_id()
     << " p=" << map.side() << " n_jumps=" << st.n_jumps
     << " mean_step_distance=" << st.mean_step_distance << '\n';
  return os.str();
}

}  // namespace mim::scan
