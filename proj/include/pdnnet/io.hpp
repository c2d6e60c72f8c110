#pragma once

// Text and image artifacts: map CSVs, 16-bit PGM heatmaps, graph CSVs.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "pdn_graph.hpp"

namespace pdn {

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

// ------------------------------------------------------------------ maps

// Row 0 first; one line per row, comma-separated, 9 significant digits.
inline std::string format_map_csv(const Map2D& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (j) out += ',';
      out += fmt_g9(m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Map2D parse_map_csv(std::string_view text, const std::string& source) {
  Map2D m;
  std::size_t line_no = 0;
  for (auto line : split_char(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = split_char(line, ',');
    if (m.rows == 0) m.cols = fields.size();
    if (fields.size() != m.cols)
      throw DataError(source + " line " + std::to_string(line_no) + ": expected " + std::to_string(m.cols) + " values");
    for (auto f : fields) m.values.push_back(parse_double(f, source + " line " + std::to_string(line_no)));
    ++m.rows;
  }
  if (m.rows == 0) throw DataError(source + ": empty map");
  return m;
}

inline void write_map_csv(const std::filesystem::path& path, const Map2D& m) { write_text_file(path, format_map_csv(m)); }

inline Map2D read_map_csv(const std::filesystem::path& path) {
  return parse_map_csv(read_text_file(path), path.string());
}

// Binary 16-bit PGM (big-endian samples), values mapped linearly
// [0, max] -> [0, 65535]; row 0 is the first image row.
inline std::string format_pgm16(const Map2D& m) {
  double hi = 0;
  for (double v : m.values) hi = std::max(hi, v);
  std::string out = "P5\n" + std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n65535\n";
  for (double v : m.values) {
    const double s = hi > 0 ? std::clamp(v / hi, 0.0, 1.0) : 0.0;
    const auto q = static_cast<unsigned>(std::lround(s * 65535.0));
    out += static_cast<char>((q >> 8) & 0xff);
    out += static_cast<char>(q & 0xff);
  }
  return out;
}

inline void write_pgm16(const std::filesystem::path& path, const Map2D& m) { write_text_file(path, format_pgm16(m)); }

// ----------------------------------------------------------------- graphs

// "#nodes,i,j,<channels...>" then one row per node in id order, then
// "#edges,src,dst" and one row per edge.
inline std::string format_graph_csv(const PdnGraph& g) {
  std::string out = "#nodes,i,j";
  for (const auto& c : g.channel_names) out += "," + c;
  out += '\n';
  const std::size_t C = g.n_channels();
  for (std::size_t v = 0; v < g.n_nodes(); ++v) {
    const auto [i, j] = g.node_coord(v);
    out += std::to_string(i) + "," + std::to_string(j);
    for (std::size_t c = 0; c < C; ++c) out += "," + fmt_g9(g.features[v * C + c]);
    out += '\n';
  }
  out += "#edges,src,dst\n";
  for (auto [s, d] : g.edges) out += std::to_string(s) + "," + std::to_string(d) + "\n";
  return out;
}

inline PdnGraph parse_graph_csv(std::string_view text, const std::string& source) {
  PdnGraph g;
  enum { None, Nodes, Edges } section = None;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t line_no = 0;
  auto where = [&] { return source + " line " + std::to_string(line_no); };
  auto to_index = [&](std::string_view s) {
    const double v = parse_double(s, where());
    if (v < 0 || v != std::floor(v)) throw DataError(where() + ": expected a nonnegative integer");
    return static_cast<std::size_t>(v);
  };
  for (auto line : split_char(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto f = split_char(line, ',');
    if (f[0] == "#nodes") {
      if (section != None || f.size() < 3 || f[1] != "i" || f[2] != "j") throw DataError(where() + ": bad #nodes header");
      for (std::size_t k = 3; k < f.size(); ++k) g.channel_names.emplace_back(f[k]);
      section = Nodes;
      continue;
    }
    if (f[0] == "#edges") {
      if (section != Nodes) throw DataError(where() + ": #edges before #nodes");
      section = Edges;
      continue;
    }
    if (section == Nodes) {
      if (f.size() != 2 + g.channel_names.size()) throw DataError(where() + ": wrong field count");
      coords.emplace_back(to_index(f[0]), to_index(f[1]));
      for (std::size_t k = 2; k < f.size(); ++k) g.features.push_back(parse_double(f[k], where()));
    } else if (section == Edges) {
      if (f.size() != 2) throw DataError(where() + ": edge rows need src,dst");
      g.edges.emplace_back(static_cast<std::uint32_t>(to_index(f[0])), static_cast<std::uint32_t>(to_index(f[1])));
    } else {
      throw DataError(where() + ": data before #nodes header");
    }
  }
  if (section != Edges) throw DataError(source + ": missing #edges section");
  if (coords.empty()) throw DataError(source + ": no nodes");
  for (auto [i, j] : coords) {
    g.n_h = std::max(g.n_h, i + 1);
    g.n_w = std::max(g.n_w, j + 1);
  }
  if (coords.size() != g.n_nodes()) throw DataError(source + ": node rows do not form a full grid");
  for (std::size_t v = 0; v < coords.size(); ++v)
    if (coords[v] != std::pair{v / g.n_w, v % g.n_w}) throw DataError(source + ": node rows out of order");
  for (auto [s, d] : g.edges)
    if (s >= g.n_nodes() || d >= g.n_nodes()) throw DataError(source + ": edge endpoint out of range");
  normalize_edges(g.edges);
  return g;
}

inline void write_graph_csv(const std::filesystem::path& path, const PdnGraph& g) {
  write_text_file(path, format_graph_csv(g));
}

inline PdnGraph read_graph_csv(const std::filesystem::path& path) {
  return parse_graph_csv(read_text_file(path), path.string());
}

// Per-tile horizontal flow code: 0 = right-to-left, 1 = both, 2 = left-to-right.
// A tile takes the code of the pair with its right neighbour (the last column
// uses the pair to its left).
inline Map2D direction_codes(const PdnGraph& g) {
  Map2D m(g.n_h, g.n_w, 1.0);
  if (g.n_w < 2) return m;
  auto has = [&](std::size_t a, std::size_t b) {
    return std::binary_search(g.edges.begin(), g.edges.end(),
                              Edge{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
  };
  for (std::size_t i = 0; i < g.n_h; ++i)
    for (std::size_t j = 0; j < g.n_w; ++j) {
      const std::size_t l = j + 1 < g.n_w ? j : j - 1;
      const std::size_t a = i * g.n_w + l, b = a + 1;
      const bool fwd = has(a, b), back = has(b, a);
      m.at(i, j) = fwd && back ? 1.0 : (fwd ? 2.0 : 0.0);
    }
  return m;
}

// Codes scaled to gray levels 0, 32767, 65534.
inline std::string format_graph_pgm(const PdnGraph& g) {
  const Map2D codes = direction_codes(g);
  std::string out = "P5\n" + std::to_string(g.n_w) + " " + std::to_string(g.n_h) + "\n65535\n";
  for (double c : codes.values) {
    const auto q = static_cast<unsigned>(c) * 32767u;
    out += static_cast<char>((q >> 8) & 0xff);
    out += static_cast<char>(q & 0xff);
  }
  return out;
}

}  // namespace pdn
