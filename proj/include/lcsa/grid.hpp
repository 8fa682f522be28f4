#pragma once

// Four-part occupancy grid around the ego vehicle and the shared affine
// embedding applied to each part.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "lcsa/core.hpp"

namespace lcsa {

inline constexpr int kGridCells = 10;
inline constexpr double kCellLength = 10.0;  // meters
inline constexpr double kGridRange = kGridCells * kCellLength;

/// Parts in role order PV, RV, PLV, PFV. Each part is a one-hot vector over
/// ten 10 m cells or all zero; stored as the hot index, -1 for empty.
struct OccupancyGrid {
  std::array<std::int8_t, kNumRoles> cell{-1, -1, -1, -1};

  Eigen::VectorXd part(int role) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(kGridCells);
    if (cell[static_cast<std::size_t>(role)] >= 0) v(cell[static_cast<std::size_t>(role)]) = 1.0;
    return v;
  }

  /// Debug rendering, one 10-character bit row per part.
  std::string bits() const {
    std::string s;
    for (int r = 0; r < kNumRoles; ++r) {
      for (int k = 0; k < kGridCells; ++k) s += cell[static_cast<std::size_t>(r)] == k ? '1' : '0';
      s += '\n';
    }
    return s;
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

inline int grid_cell(double distance) {
  if (!(distance >= 0.0) || !(distance < kGridRange)) return -1;
  return static_cast<int>(std::floor(distance / kCellLength));
}

inline OccupancyGrid encode_grid(const NeighborContext& ctx) {
  OccupancyGrid g;
  for (int r = 0; r < kNumRoles; ++r) g.cell[static_cast<std::size_t>(r)] = static_cast<std::int8_t>(grid_cell(ctx.d[r]));
  return g;
}

struct EmbeddingParams {
  Eigen::MatrixXd W;  // embed_dim x 10
  Eigen::VectorXd b;  // embed_dim

  int dim() const { return static_cast<int>(b.size()); }
};

/// [W g_pv + b; W g_rv + b; W g_plv + b; W g_pfv + b]
inline Eigen::VectorXd embed(const OccupancyGrid& grid, const EmbeddingParams& p) {
  if (p.W.cols() != kGridCells || p.W.rows() != p.b.size())
    throw ContractError("embedding shape mismatch: W is " + std::to_string(p.W.rows()) + "x" +
                        std::to_string(p.W.cols()) + ", b has " + std::to_string(p.b.size()));
  const Eigen::Index e = p.b.size();
  Eigen::VectorXd out(kNumRoles * e);
  for (int r = 0; r < kNumRoles; ++r) {
    auto seg = out.segment(r * e, e);
    seg = p.b;
    const int k = grid.cell[static_cast<std::size_t>(r)];
    if (k >= 0) seg += p.W.col(k);
  }
  return out;
}

}  // namespace lcsa
