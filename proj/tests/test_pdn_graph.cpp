#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "pdnnet/pdn_graph.hpp"
#include "pdnnet/rng.hpp"

using namespace pdn;

namespace {

Layout bare_layout(double w, double h, std::vector<double> strips) {
  Layout L;
  L.width_um = w;
  L.height_um = h;
  L.pdn.vstrip_x_um = std::move(strips);
  for (double x : L.pdn.vstrip_x_um) L.pdn.pad_xy_um.emplace_back(x, 0.0);
  return L;
}

CellInstance cell(std::string id, double x, double y, double leak, double in, double sw, std::vector<double> tr) {
  CellInstance c;
  c.id = std::move(id);
  c.x_um = x;
  c.y_um = y;
  c.leakage_w = leak;
  c.internal_w = in;
  c.switching_w = sw;
  c.trace.frames = std::move(tr);
  return c;
}

std::set<Edge> edge_set(const PdnGraph& g) { return {g.edges.begin(), g.edges.end()}; }

// Geometric restatement of the case table: pick the nearest strip to the
// left node's center (ties to the left), then compare its x against the two
// node centers directly.
HorizontalEdge reference_case(double center_left, double center_right, const std::vector<double>& strips) {
  double chosen = strips.front();
  for (double x : strips) {
    const double dc = std::abs(chosen - center_left), dx = std::abs(x - center_left);
    if (dx < dc || (dx == dc && x < chosen)) chosen = x;
  }
  if (chosen <= center_left) return HorizontalEdge::LeftToRight;
  if (chosen <= center_right) return HorizontalEdge::Both;
  return HorizontalEdge::RightToLeft;
}

}  // namespace

TEST_CASE("tile grid dimensions and cell assignment", "[pdngraph]") {
  Layout L = bare_layout(10, 10, {5});
  L.cells.push_back(cell("a", 7.1, 2.0, 0, 0, 0, {0}));
  const auto g = tile_grid(L, 5, 5);
  CHECK(g.n_w() == 2);
  CHECK(g.n_h() == 2);
  CHECK(g.tile_of(7.1, 2.0) == TileCoord{0, 1});
  CHECK(g.cells_in(g.node(0, 1)) == std::vector<std::size_t>{0});

  const auto g3 = tile_grid(L, 4, 4);
  CHECK(g3.n_w() == 3);
  CHECK(g3.n_h() == 3);

  CHECK_THROWS_AS(tile_grid(L, 0, 1), DataError);
  Layout empty = bare_layout(10, 10, {5});
  CHECK_THROWS_AS(tile_grid(empty, 20, 20), DataError);
}

TEST_CASE("every cell lands in exactly one tile", "[pdngraph][property]") {
  GenSpec spec;
  spec.n_cells = 100;
  spec.width_um = 13.0;
  spec.height_um = 9.5;
  spec.rng_seed = 3;
  const Layout L = generate_synthetic(spec);
  const auto g = tile_grid(L, 1.7, 1.3);
  std::vector<int> hits(L.cells.size(), 0);
  for (std::size_t v = 0; v < g.n_nodes(); ++v)
    for (auto c : g.cells_in(v)) {
      ++hits[c];
      const auto t = g.coord(v);
      const auto& cc = L.cells[c];
      CHECK(cc.x_um >= t.col * 1.7 - 1e-12);
      CHECK(cc.y_um >= t.row * 1.3 - 1e-12);
    }
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("node features sum cell powers per tile", "[pdngraph]") {
  Layout L = bare_layout(4, 2, {1});
  L.cells.push_back(cell("a", 0.5, 0.5, 0.1, 0.2, 0.3, {1, 2}));
  const auto g = tile_grid(L, 1, 1);
  const auto x = node_features(g, L);
  REQUIRE(x.size() == 8 * 5);
  const std::vector<double> row0(x.begin(), x.begin() + 5);
  CHECK(row0 == std::vector<double>{0.1, 0.2, 0.3, 1, 2});
  for (std::size_t k = 5; k < x.size(); ++k) CHECK(x[k] == 0.0);

  // Additivity: a second cell in the same tile adds its row.
  Layout L2 = L;
  L2.cells.push_back(cell("b", 0.9, 0.1, 0.05, 0.5, 0.25, {3, 0.5}));
  const auto x2 = node_features(tile_grid(L2, 1, 1), L2);
  const double expect[] = {0.1 + 0.05, 0.2 + 0.5, 0.3 + 0.25, 1 + 3, 2 + 0.5};
  for (int c = 0; c < 5; ++c) CHECK(x2[c] == expect[c]);
}

TEST_CASE("feature rows equal the sum of per-cell rows", "[pdngraph][property]") {
  GenSpec spec;
  spec.n_cells = 150;
  spec.t_sim = 3;
  spec.rng_seed = 11;
  const Layout L = generate_synthetic(spec);
  const auto g = tile_grid(L, 2, 2);
  const auto x = node_features(g, L);
  const std::size_t C = 6;
  std::vector<double> ref(g.n_nodes() * C, 0.0);
  for (const auto& c : L.cells) {
    const auto t = g.tile_of(c.x_um, c.y_um);
    double* r = ref.data() + g.node(t.row, t.col) * C;
    r[0] += c.leakage_w;
    r[1] += c.internal_w;
    r[2] += c.switching_w;
    for (int k = 0; k < 3; ++k) r[3 + k] += c.trace.frames[k];
  }
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(x[k] == Catch::Approx(ref[k]).epsilon(1e-12));
  for (double f : x) CHECK(f >= 0);
}

TEST_CASE("nearest strip offset", "[pdngraph]") {
  const Layout L = bare_layout(8, 1, {2});
  const auto g = tile_grid(L, 1, 1);
  CHECK(nearest_strip_offset(0, g, {2}) == 1.5);
  CHECK(nearest_strip_offset(3, g, {2}) == -1.5);
  CHECK(nearest_strip_offset(1, g, {1, 3}) == -0.5);
  // Equidistant strips resolve to the left one.
  CHECK(nearest_strip_offset(1, g, {0.5, 2.5}) == -1.0);
  // Offsets are in tile units.
  const auto g2 = tile_grid(bare_layout(8, 1, {2}), 2, 1);
  CHECK(nearest_strip_offset(0, g2, {5}) == 2.0);
}

TEST_CASE("edge directions on a single row", "[pdngraph]") {
  const Layout L = bare_layout(4, 1, {2});
  const auto g = build_graph(tile_grid(L, 1, 1), L);
  CHECK(edge_set(g) == std::set<Edge>{{1, 0}, {1, 2}, {2, 1}, {2, 3}});
}

TEST_CASE("single tile has no edges", "[pdngraph]") {
  const Layout L = bare_layout(1, 1, {0.5});
  CHECK(build_graph(tile_grid(L, 1, 1), L).edges.empty());
}

TEST_CASE("regular PDN gives a periodic direction pattern", "[pdngraph]") {
  // Pitch 2 tiles: strips at 1, 3, 5, ... on a 12-wide die.
  GenSpec spec;
  spec.width_um = 12;
  spec.height_um = 3;
  spec.strip_pitch_um = 2;
  const Layout L = generate_synthetic(spec);
  const auto grid = tile_grid(L, 1, 1);
  const auto g = build_graph(grid, L);
  const auto E = edge_set(g);
  auto code = [&](std::size_t i, std::size_t j) {
    const auto a = static_cast<std::uint32_t>(grid.node(i, j)), b = static_cast<std::uint32_t>(grid.node(i, j + 1));
    return int(E.count({a, b})) + 2 * int(E.count({b, a}));
  };
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j + 3 < 12; ++j) CHECK(code(i, j) == code(i, j + 2));
  CHECK(code(0, 0) != code(0, 1));
}

TEST_CASE("graph invariants on random strip sets", "[pdngraph][property]") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const double dx = 0.5 + rng.uniform() * 2.0;
    const double dy = 0.5 + rng.uniform() * 2.0;
    const double W = 4 + rng.uniform() * 20, H = 2 + rng.uniform() * 10;
    std::vector<double> strips;
    const std::size_t ns = 1 + rng.below(4);
    for (std::size_t k = 0; k < ns; ++k) strips.push_back(rng.uniform() * W);
    std::sort(strips.begin(), strips.end());
    const Layout L = bare_layout(W, H, strips);
    const auto grid = tile_grid(L, dx, dy);
    const auto g = build_graph(grid, L);
    const auto E = edge_set(g);

    for (auto [s, d] : g.edges) {
      const auto a = grid.coord(s), b = grid.coord(d);
      const auto di = a.row > b.row ? a.row - b.row : b.row - a.row;
      const auto dj = a.col > b.col ? a.col - b.col : b.col - a.col;
      CHECK(di + dj == 1);
      if (di == 1) CHECK(E.count({d, s}) == 1);
    }
    for (std::size_t i = 0; i < grid.n_h(); ++i)
      for (std::size_t j = 0; j < grid.n_w(); ++j) {
        const auto v = static_cast<std::uint32_t>(grid.node(i, j));
        if (i + 1 < grid.n_h()) CHECK(E.count({v, static_cast<std::uint32_t>(grid.node(i + 1, j))}) == 1);
        if (j + 1 == grid.n_w()) continue;
        const auto r = static_cast<std::uint32_t>(grid.node(i, j + 1));
        const auto expect = reference_case((j + 0.5) * dx, (j + 1.5) * dx, strips);
        const bool fwd = E.count({v, r}), back = E.count({r, v});
        switch (expect) {
          case HorizontalEdge::LeftToRight: CHECK((fwd && !back)); break;
          case HorizontalEdge::Both: CHECK((fwd && back)); break;
          case HorizontalEdge::RightToLeft: CHECK((!fwd && back)); break;
        }
      }
  }
}

TEST_CASE("bidirected closure", "[pdngraph]") {
  PdnGraph g;
  g.n_h = 1;
  g.n_w = 2;
  g.edges = {{0, 1}};
  const auto b = to_bidirected(g);
  CHECK(b.edges == std::vector<Edge>{{0, 1}, {1, 0}});
  CHECK(to_bidirected(b).edges == b.edges);
  CHECK(is_bidirected(b.edges));
  CHECK_FALSE(is_bidirected(g.edges));

  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const double W = 2 + rng.uniform() * 15, H = 1 + rng.uniform() * 8;
    const Layout L = bare_layout(W, H, {rng.uniform() * W});
    const auto grid = tile_grid(L, 1, 1);
    const auto bi = to_bidirected(build_graph(grid, L));
    const std::size_t nw = grid.n_w(), nh = grid.n_h();
    CHECK(bi.edges.size() == 2 * (2 * nw * nh - nw - nh));
  }
}
