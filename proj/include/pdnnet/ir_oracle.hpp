#pragma once

// Ground-truth IR drop: resistive PDN network assembly and per-frame DC solves
// of the nodal system G V = J.

#include <algorithm>
#include <cstdint>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"
#include "layout.hpp"
#include "pdn_graph.hpp"
#include "sparse.hpp"

namespace pdn {

// Pad stamp conductance (S). Keeps G SPD while pinning pads to vdd.
inline constexpr double kPadConductance = 1e9;
inline constexpr double kDefaultSolveTol = 1e-10;

enum class NodeKind { TileTap, StripNode };

struct NetNode {
  NodeKind kind = NodeKind::TileTap;
  std::size_t row = 0;
  std::size_t index = 0;  // column for taps, strip number for strip nodes
};

struct Resistor {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double conductance = 0.0;
};

// Taps occupy node ids [0, n_taps) in tile order; strip nodes follow,
// strip-major. Pads are strip nodes stamped to vdd.
struct ResistorNetwork {
  std::size_t n_h = 0;
  std::size_t n_w = 0;
  double vdd_v = 1.0;
  std::vector<NetNode> nodes;
  std::vector<Resistor> edges;
  std::vector<std::uint32_t> pads;  // sorted, unique

  std::size_t n_taps() const { return n_h * n_w; }
  std::size_t size() const { return nodes.size(); }
};

class StructuralError : public DataError {
 public:
  using DataError::DataError;
};

// Every node reachable from some pad through resistive edges.
inline bool is_connected(const ResistorNetwork& net) {
  if (net.pads.empty()) return false;
  std::vector<std::vector<std::uint32_t>> adj(net.size());
  for (const auto& e : net.edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  std::vector<char> seen(net.size(), 0);
  std::queue<std::uint32_t> q;
  for (auto p : net.pads) {
    seen[p] = 1;
    q.push(p);
  }
  std::size_t count = net.pads.size();
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (auto w : adj[u])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        q.push(w);
      }
  }
  return count == net.size();
}

inline ResistorNetwork build_resistor_network(const Layout& L, const TileGrid& grid) {
  ResistorNetwork net;
  net.n_h = grid.n_h();
  net.n_w = grid.n_w();
  net.vdd_v = L.pdn.vdd_v;
  const double g_lrl = 1.0 / L.pdn.r_lrl_ohm_per_tile;
  const double g_hpr = 1.0 / L.pdn.r_hpr_ohm_per_tile;
  const double g_via = 1.0 / L.pdn.r_via_ohm;
  if (!(g_lrl > 0) || !(g_hpr > 0) || !(g_via > 0)) throw StructuralError("resistances must be positive");

  for (std::size_t i = 0; i < net.n_h; ++i)
    for (std::size_t j = 0; j < net.n_w; ++j) net.nodes.push_back({NodeKind::TileTap, i, j});

  auto tap = [&](std::size_t i, std::size_t j) { return static_cast<std::uint32_t>(grid.node(i, j)); };
  for (std::size_t i = 0; i < net.n_h; ++i)
    for (std::size_t j = 0; j < net.n_w; ++j) {
      if (j + 1 < net.n_w) net.edges.push_back({tap(i, j), tap(i, j + 1), g_lrl});
      if (i + 1 < net.n_h) net.edges.push_back({tap(i, j), tap(i + 1, j), g_lrl});
    }

  const auto& strips = L.pdn.vstrip_x_um;
  auto strip_node = [&](std::size_t k, std::size_t i) {
    return static_cast<std::uint32_t>(net.n_taps() + k * net.n_h + i);
  };
  for (std::size_t k = 0; k < strips.size(); ++k) {
    for (std::size_t i = 0; i < net.n_h; ++i) net.nodes.push_back({NodeKind::StripNode, i, k});
    const std::size_t col = grid.tile_of(strips[k], 0.0).col;
    for (std::size_t i = 0; i < net.n_h; ++i) {
      if (i + 1 < net.n_h) net.edges.push_back({strip_node(k, i), strip_node(k, i + 1), g_hpr});
      net.edges.push_back({strip_node(k, i), tap(i, col), g_via});
    }
  }

  for (const auto& [x, y] : L.pdn.pad_xy_um) {
    const auto it = std::find(strips.begin(), strips.end(), x);
    if (it == strips.end()) throw StructuralError("pad at x=" + fmt_g9(x) + " is not on a strip");
    const auto k = static_cast<std::size_t>(it - strips.begin());
    net.pads.push_back(strip_node(k, grid.tile_of(x, y).row));
  }
  std::sort(net.pads.begin(), net.pads.end());
  net.pads.erase(std::unique(net.pads.begin(), net.pads.end()), net.pads.end());

  if (net.pads.empty()) throw StructuralError("network has no pads");
  if (!is_connected(net)) throw StructuralError("network is disconnected from the pads");
  return net;
}

// Per-tap currents (A) for one frame; strip nodes draw nothing.
using CurrentLoads = std::vector<double>;

struct LinearSystem {
  CsrMatrix G;
  std::vector<double> J;
};

// Weighted Laplacian plus pad stamps; J = -load at taps, g_pad*vdd at pads.
inline LinearSystem assemble_system(const ResistorNetwork& net, const CurrentLoads& loads,
                                    double g_pad = kPadConductance) {
  if (loads.size() != net.n_taps()) throw DataError("load vector does not match tap count");
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
  t.reserve(4 * net.edges.size() + net.pads.size());
  for (const auto& e : net.edges) {
    if (!(e.conductance > 0)) throw DataError("nonpositive conductance");
    t.emplace_back(e.a, e.a, e.conductance);
    t.emplace_back(e.b, e.b, e.conductance);
    t.emplace_back(e.a, e.b, -e.conductance);
    t.emplace_back(e.b, e.a, -e.conductance);
  }
  for (auto p : net.pads) t.emplace_back(p, p, g_pad);

  LinearSystem sys;
  sys.G = CsrMatrix::from_triplets(net.size(), std::move(t));
  sys.J.assign(net.size(), 0.0);
  for (std::size_t v = 0; v < net.n_taps(); ++v) sys.J[v] = -loads[v];
  for (auto p : net.pads) sys.J[p] += g_pad * net.vdd_v;
  return sys;
}

inline std::vector<double> solve(const CsrMatrix& G, const std::vector<double>& J, double tol = kDefaultSolveTol,
                                 SolveStats* stats = nullptr) {
  return solve_pcg(G, J, tol, stats);
}

// Drop-form solve: since G*1 is nonzero only at pads, d = vdd - V satisfies
// G d = loads (zero at pads), whose right-hand side carries no pad stamp.
inline std::vector<double> solve_drops(const CsrMatrix& G, const ResistorNetwork& net, const CurrentLoads& loads,
                                       double tol = kDefaultSolveTol, SolveStats* stats = nullptr) {
  std::vector<double> rhs(net.size(), 0.0);
  std::copy(loads.begin(), loads.end(), rhs.begin());
  return solve_pcg(G, rhs, tol, stats);
}

inline CurrentLoads frame_loads(const Layout& L, const TileGrid& grid, std::size_t frame) {
  CurrentLoads I(grid.n_nodes(), 0.0);
  for (std::size_t v = 0; v < grid.n_nodes(); ++v) {
    double p = 0.0;
    for (std::size_t ci : grid.cells_in(v)) p += L.cells[ci].leakage_w + L.cells[ci].trace.frames.at(frame);
    I[v] = p / L.pdn.vdd_v;
  }
  return I;
}

inline Map2D tap_map(const ResistorNetwork& net, const std::vector<double>& node_values) {
  Map2D m(net.n_h, net.n_w);
  std::copy_n(node_values.begin(), net.n_taps(), m.values.begin());
  return m;
}

struct DynamicDrop {
  std::vector<Map2D> frames;
  Map2D peak;
};

// One DC solve per frame; the label is the per-tile maximum over frames.
inline DynamicDrop simulate_dynamic(const Layout& L, const TileGrid& grid, double tol = kDefaultSolveTol) {
  const auto net = build_resistor_network(L, grid);
  const auto sys = assemble_system(net, CurrentLoads(net.n_taps(), 0.0));
  DynamicDrop out;
  const std::size_t T = std::max<std::size_t>(1, L.t_sim());
  for (std::size_t t = 0; t < T; ++t) {
    const auto loads = L.cells.empty() ? CurrentLoads(net.n_taps(), 0.0) : frame_loads(L, grid, t);
    out.frames.push_back(tap_map(net, solve_drops(sys.G, net, loads, tol)));
  }
  out.peak = out.frames.front();
  for (const auto& f : out.frames)
    for (std::size_t k = 0; k < f.size(); ++k) out.peak.values[k] = std::max(out.peak.values[k], f.values[k]);
  return out;
}

}  // namespace pdn
