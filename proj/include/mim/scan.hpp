#pragma once

// Orderings that serialise a p x p patch into a sequence.
//
// Type 1 of every design is the canonical ordering starting at the top-left
// corner; types 2-4 are fixed dihedral images of it:
//   type 2 = transpose(type 1)          (column-wise, starts top-left)
//   type 3 = flip_columns(type 2)       (column-wise, starts top-right)
//   type 4 = flip_columns(type 1)       (row-wise, starts top-right)

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mim/tensor.hpp"

namespace mim::scan {

enum class Design { Mamba, Raster, Diagonal, Zigzag };

std::string_view design_name(Design d);
/// Throws UsageError on an unknown name.
Design parse_design(std::string_view name);

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Bijective map from sequence step to patch cell.
class ScanMap {
 public:
  ScanMap(std::size_t p, Design design, int type_id, std::vector<Cell> order);

  std::size_t side() const { return p_; }
  Design design() const { return design_; }
  int type_id() const { return type_id_; }
  std::size_t length() const { return order_.size(); }
  const std::vector<Cell>& order() const { return order_; }
  const Cell& operator[](std::size_t k) const { return order_[k]; }

  /// Row-major flat cell index (row * p + col) of every step.
  std::vector<std::size_t> flat_order() const;
  /// For every row-major cell, the step that visits it.
  std::vector<std::size_t> inverse() const;

 private:
  std::size_t p_;
  Design design_;
  int type_id_;
  std::vector<Cell> order_;
};

/// Forward/backward halves of a centred scan. Both end at the centre cell;
/// `backward` is stored end-cell first.
struct SplitMaps {
  std::vector<Cell> forward;
  std::vector<Cell> backward;
};

/// Snake (boustrophedon) orderings of the centralised cross scan.
/// Throws std::invalid_argument for even/non-positive p or type outside 1..4.
ScanMap mcs_map(std::size_t p, int type_id);

/// Raster, diagonal and zig-zag orderings used by the scan-design ablation.
ScanMap alt_scan_map(std::size_t p, Design design, int type_id);

/// Any design; dispatches to mcs_map or alt_scan_map.
ScanMap make_scan_map(std::size_t p, Design design, int type_id);

/// Splits at the middle step. Throws std::invalid_argument when the middle
/// step is not the patch centre.
SplitMaps split_center(const ScanMap& map);

/// Sequence positions of the two halves within the complete sequence:
/// forward = 0..T, backward = L-1 down to T, with T = (L-1)/2.
struct SplitIndices {
  std::vector<std::size_t> forward;
  std::vector<std::size_t> backward;
};
SplitIndices split_indices(std::size_t length);

/// out[k] = patch[order[k]] for a [p x p x D] patch; differentiable.
Tensor gather_by_map(const Tensor& patch, const ScanMap& map);
Tensor gather_by_cells(const Tensor& patch, const std::vector<Cell>& cells);
/// Inverse of gather_by_map: [p^2 x D] sequence back to [p x p x D].
Tensor scatter_by_map(const Tensor& seq, const ScanMap& map);

struct ContinuityStats {
  std::size_t n_jumps = 0;
  double mean_step_distance = 0;
};

/// Counts consecutive steps with Manhattan distance > 1.
ContinuityStats continuity_stats(const ScanMap& map);

/// "k row col" lines followed by the continuity summary.
std::string dump(const ScanMap& map);

}  // namespace mim::scan
