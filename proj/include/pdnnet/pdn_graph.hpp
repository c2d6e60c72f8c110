#pragma once

// Uniform tiling of a layout and the directed PDN graph built on it: one node
// per tile, power features summed per tile, horizontal edges oriented away
// from the nearest vertical strip, vertical edges bidirectional.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "layout.hpp"

namespace pdn {

struct TileCoord {
  std::size_t row = 0;  // i, along y
  std::size_t col = 0;  // j, along x
  bool operator==(const TileCoord&) const = default;
};

class TileGrid {
 public:
  TileGrid() = default;
  TileGrid(double dx_um, double dy_um, std::size_t n_w, std::size_t n_h)
      : dx_um_(dx_um), dy_um_(dy_um), n_w_(n_w), n_h_(n_h), tile_cells_(n_w * n_h) {}

  double dx_um() const { return dx_um_; }
  double dy_um() const { return dy_um_; }
  std::size_t n_w() const { return n_w_; }
  std::size_t n_h() const { return n_h_; }
  std::size_t n_nodes() const { return n_w_ * n_h_; }
  std::size_t node(std::size_t row, std::size_t col) const { return row * n_w_ + col; }
  TileCoord coord(std::size_t node) const { return {node / n_w_, node % n_w_}; }

  // Tile holding point (x, y); points on the far die edge fold into the last tile.
  TileCoord tile_of(double x_um, double y_um) const {
    auto clamp_index = [](double v, double d, std::size_t n) {
      const double f = std::floor(v / d);
      if (!(f > 0)) return std::size_t{0};
      return std::min(static_cast<std::size_t>(f), n - 1);
    };
    return {clamp_index(y_um, dy_um_, n_h_), clamp_index(x_um, dx_um_, n_w_)};
  }

  // Indices into Layout::cells, one list per node.
  const std::vector<std::size_t>& cells_in(std::size_t node) const { return tile_cells_[node]; }
  std::vector<std::vector<std::size_t>>& mutable_cells() { return tile_cells_; }

 private:
  double dx_um_ = 1.0;
  double dy_um_ = 1.0;
  std::size_t n_w_ = 0;
  std::size_t n_h_ = 0;
  std::vector<std::vector<std::size_t>> tile_cells_;
};

inline TileGrid tile_grid(const Layout& L, double dx_um, double dy_um) {
  if (!(dx_um > 0) || !(dy_um > 0)) throw DataError("tile size must be positive");
  if (dx_um > L.width_um && dy_um > L.height_um && L.cells.empty())
    throw DataError("degenerate grid: tile larger than die and no cells");
  const auto n_w = static_cast<std::size_t>(std::max(1.0, std::ceil(L.width_um / dx_um)));
  const auto n_h = static_cast<std::size_t>(std::max(1.0, std::ceil(L.height_um / dy_um)));
  TileGrid g(dx_um, dy_um, n_w, n_h);
  for (std::size_t c = 0; c < L.cells.size(); ++c) {
    const auto t = g.tile_of(L.cells[c].x_um, L.cells[c].y_um);
    g.mutable_cells()[g.node(t.row, t.col)].push_back(c);
  }
  return g;
}

// Channel layout [leakage, internal, switching, trace_0 .. trace_{T-1}].
inline std::vector<std::string> feature_channel_names(std::size_t t_sim) {
  std::vector<std::string> names = {"leakage", "internal", "switching"};
  for (std::size_t t = 0; t < t_sim; ++t) names.push_back("trace" + std::to_string(t));
  return names;
}

// Row-major N x C per-tile sums of cell power features.
inline std::vector<double> node_features(const TileGrid& grid, const Layout& L) {
  const std::size_t C = 3 + L.t_sim();
  std::vector<double> x(grid.n_nodes() * C, 0.0);
  for (std::size_t v = 0; v < grid.n_nodes(); ++v) {
    double* row = x.data() + v * C;
    for (std::size_t ci : grid.cells_in(v)) {
      const auto& c = L.cells[ci];
      row[0] += c.leakage_w;
      row[1] += c.internal_w;
      row[2] += c.switching_w;
      for (std::size_t t = 0; t < c.trace.frames.size(); ++t) row[3 + t] += c.trace.frames[t];
    }
  }
  return x;
}

// Signed distance, in tile widths, from the center of column `col` to the
// nearest strip. Equidistant strips resolve to the left (negative) one.
inline double nearest_strip_offset(std::size_t col, const TileGrid& grid, const std::vector<double>& strips_um) {
  if (strips_um.empty()) throw DataError("no strips");
  const double vx = (static_cast<double>(col) + 0.5) * grid.dx_um();
  double best = std::numeric_limits<double>::infinity();
  for (double x : strips_um) {
    const double s = x - vx;
    if (std::abs(s) < std::abs(best) || (std::abs(s) == std::abs(best) && s < best)) best = s;
  }
  return best / grid.dx_um();
}

using Edge = std::pair<std::uint32_t, std::uint32_t>;  // (src, dst)

struct PdnGraph {
  std::size_t n_h = 0;
  std::size_t n_w = 0;
  std::vector<double> features;  // n_nodes x n_channels, row-major
  std::vector<std::string> channel_names;
  std::vector<Edge> edges;  // sorted by (src, dst), no duplicates

  std::size_t n_nodes() const { return n_h * n_w; }
  std::size_t n_channels() const { return channel_names.size(); }
  TileCoord node_coord(std::size_t v) const { return {v / n_w, v % n_w}; }
};

enum class HorizontalEdge { LeftToRight, Both, RightToLeft };

// Case table for the pair (j, j+1) given the offset at column j.
inline HorizontalEdge classify_offset(double s) {
  if (s <= 0) return HorizontalEdge::LeftToRight;
  if (s <= 1) return HorizontalEdge::Both;
  return HorizontalEdge::RightToLeft;
}

inline void normalize_edges(std::vector<Edge>& e) {
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
}

inline PdnGraph build_graph(const TileGrid& grid, const Layout& L) {
  PdnGraph g;
  g.n_h = grid.n_h();
  g.n_w = grid.n_w();
  g.features = node_features(grid, L);
  g.channel_names = feature_channel_names(L.t_sim());

  std::vector<HorizontalEdge> col_case(g.n_w);
  for (std::size_t j = 0; j + 1 < g.n_w; ++j)
    col_case[j] = classify_offset(nearest_strip_offset(j, grid, L.pdn.vstrip_x_um));

  for (std::size_t i = 0; i < g.n_h; ++i) {
    for (std::size_t j = 0; j < g.n_w; ++j) {
      const auto v = static_cast<std::uint32_t>(grid.node(i, j));
      if (j + 1 < g.n_w) {
        const auto right = static_cast<std::uint32_t>(grid.node(i, j + 1));
        switch (col_case[j]) {
          case HorizontalEdge::LeftToRight: g.edges.emplace_back(v, right); break;
          case HorizontalEdge::Both:
            g.edges.emplace_back(v, right);
            g.edges.emplace_back(right, v);
            break;
          case HorizontalEdge::RightToLeft: g.edges.emplace_back(right, v); break;
        }
      }
      if (i + 1 < g.n_h) {
        const auto down = static_cast<std::uint32_t>(grid.node(i + 1, j));
        g.edges.emplace_back(v, down);
        g.edges.emplace_back(down, v);
      }
    }
  }
  normalize_edges(g.edges);
  return g;
}

inline PdnGraph to_bidirected(const PdnGraph& g) {
  PdnGraph out = g;
  out.edges.reserve(2 * g.edges.size());
  for (auto [s, d] : g.edges) out.edges.emplace_back(d, s);
  normalize_edges(out.edges);
  return out;
}

inline bool is_bidirected(const std::vector<Edge>& sorted_edges) {
  for (auto [s, d] : sorted_edges)
    if (!std::binary_search(sorted_edges.begin(), sorted_edges.end(), Edge{d, s})) return false;
  return true;
}

}  // namespace pdn
