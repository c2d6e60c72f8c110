#pragma once

// Layout data model: placed cells with per-cell power, a vertical-strip PDN,
// the line-oriented layout file format and a seeded synthetic generator.

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace pdn {

struct PowerTrace {
  std::vector<double> frames;  // total dynamic power per frame (W)
  bool operator==(const PowerTrace&) const = default;
};

struct CellInstance {
  std::string id;
  double x_um = 0.0;
  double y_um = 0.0;
  double leakage_w = 0.0;
  double internal_w = 0.0;
  double switching_w = 0.0;
  PowerTrace trace;
  bool operator==(const CellInstance&) const = default;
};

struct PdnSpec {
  double vdd_v = 1.0;
  std::vector<double> vstrip_x_um;
  std::vector<std::pair<double, double>> pad_xy_um;
  double r_lrl_ohm_per_tile = 1.0;
  double r_hpr_ohm_per_tile = 0.01;
  double r_via_ohm = 0.05;
  bool operator==(const PdnSpec&) const = default;
};

struct Layout {
  double width_um = 0.0;
  double height_um = 0.0;
  std::vector<CellInstance> cells;
  PdnSpec pdn;

  // Frame count shared by all cells; 0 for a cell-less layout.
  std::size_t t_sim() const { return cells.empty() ? 0 : cells.front().trace.frames.size(); }

  bool operator==(const Layout&) const = default;
};

// Each violation names the offending entity and the broken rule.
inline std::vector<std::string> validate(const Layout& L) {
  std::vector<std::string> v;
  auto bad = [](double x) { return !std::isfinite(x); };
  if (bad(L.width_um) || bad(L.height_um) || L.width_um <= 0 || L.height_um <= 0)
    v.push_back("die: width and height must be positive");

  const auto& p = L.pdn;
  if (bad(p.vdd_v) || p.vdd_v <= 0) v.push_back("pdn: vdd must be positive");
  if (bad(p.r_lrl_ohm_per_tile) || p.r_lrl_ohm_per_tile <= 0 || bad(p.r_hpr_ohm_per_tile) ||
      p.r_hpr_ohm_per_tile <= 0 || bad(p.r_via_ohm) || p.r_via_ohm <= 0)
    v.push_back("pdn: resistances must be positive");
  if (p.vstrip_x_um.empty()) v.push_back("pdn: at least one strip required");
  for (std::size_t k = 0; k < p.vstrip_x_um.size(); ++k) {
    const double x = p.vstrip_x_um[k];
    if (bad(x) || x < 0 || x > L.width_um)
      v.push_back("strip " + std::to_string(k) + " (x=" + fmt_g9(x) + "): strip outside die");
    if (k > 0 && !(x > p.vstrip_x_um[k - 1]))
      v.push_back("strip " + std::to_string(k) + " (x=" + fmt_g9(x) + "): strips not strictly increasing");
  }
  if (p.pad_xy_um.empty()) v.push_back("pdn: at least one pad required");
  for (std::size_t k = 0; k < p.pad_xy_um.size(); ++k) {
    const auto [x, y] = p.pad_xy_um[k];
    const std::string name = "pad " + std::to_string(k) + " (x=" + fmt_g9(x) + ", y=" + fmt_g9(y) + ")";
    if (std::find(p.vstrip_x_um.begin(), p.vstrip_x_um.end(), x) == p.vstrip_x_um.end())
      v.push_back(name + ": pad off-strip");
    if (bad(y) || y < 0 || y > L.height_um) v.push_back(name + ": pad outside die");
  }

  std::unordered_set<std::string> ids;
  const std::size_t t_sim = L.t_sim();
  for (const auto& c : L.cells) {
    const std::string name = "cell " + c.id;
    if (c.id.empty()) v.push_back("cell with empty id");
    if (!ids.insert(c.id).second) v.push_back(name + ": duplicate id");
    if (bad(c.x_um) || bad(c.y_um) || c.x_um < 0 || c.y_um < 0 || c.x_um > L.width_um ||
        c.y_um > L.height_um)
      v.push_back(name + ": cell outside die");
    if (bad(c.leakage_w) || c.leakage_w < 0) v.push_back(name + ": negative leakage");
    if (bad(c.internal_w) || c.internal_w < 0) v.push_back(name + ": negative internal power");
    if (bad(c.switching_w) || c.switching_w < 0) v.push_back(name + ": negative switching power");
    if (c.trace.frames.empty()) v.push_back(name + ": empty power trace");
    if (c.trace.frames.size() != t_sim) v.push_back(name + ": trace length differs from layout frame count");
    if (std::any_of(c.trace.frames.begin(), c.trace.frames.end(), [&](double f) { return bad(f) || f < 0; }))
      v.push_back(name + ": negative trace frame");
  }
  return v;
}

inline std::string serialize_layout(const Layout& L) {
  std::ostringstream os;
  os << "die " << fmt_g9(L.width_um) << ' ' << fmt_g9(L.height_um) << '\n';
  os << "vdd " << fmt_g9(L.pdn.vdd_v) << '\n';
  os << "res " << fmt_g9(L.pdn.r_lrl_ohm_per_tile) << ' ' << fmt_g9(L.pdn.r_hpr_ohm_per_tile) << ' '
     << fmt_g9(L.pdn.r_via_ohm) << '\n';
  for (double x : L.pdn.vstrip_x_um) os << "strip " << fmt_g9(x) << '\n';
  for (auto [x, y] : L.pdn.pad_xy_um) os << "pad " << fmt_g9(x) << ' ' << fmt_g9(y) << '\n';
  for (const auto& c : L.cells) {
    os << "cell " << c.id << ' ' << fmt_g9(c.x_um) << ' ' << fmt_g9(c.y_um) << ' ' << fmt_g9(c.leakage_w)
       << ' ' << fmt_g9(c.internal_w) << ' ' << fmt_g9(c.switching_w);
    for (double f : c.trace.frames) os << ' ' << fmt_g9(f);
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline double parse_number(std::string_view tok, std::size_t line) {
  std::string s(tok);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "expected a number, got '" + s + "'");
  }
  if (used != s.size()) throw ParseError(line, "expected a number, got '" + s + "'");
  return v;
}

}  // namespace detail

// Parses the layout text format. Throws ParseError on syntax problems and
// DataError naming the offending entity on semantic ones.
inline Layout parse_layout(std::string_view text) {
  Layout L;
  bool have_die = false, have_vdd = false, have_res = false;
  std::size_t line_no = 0;
  for (std::string_view line : split_char(text, '\n')) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string_view kw = tok[0];
    auto expect = [&](std::size_t n) {
      if (tok.size() != n)
        throw ParseError(line_no, "'" + std::string(kw) + "' expects " + std::to_string(n - 1) + " fields");
    };
    auto num = [&](std::size_t i) { return detail::parse_number(tok[i], line_no); };
    if (kw == "die") {
      expect(3);
      if (have_die) throw ParseError(line_no, "duplicate 'die'");
      L.width_um = num(1);
      L.height_um = num(2);
      have_die = true;
    } else if (kw == "vdd") {
      expect(2);
      if (have_vdd) throw ParseError(line_no, "duplicate 'vdd'");
      L.pdn.vdd_v = num(1);
      have_vdd = true;
    } else if (kw == "res") {
      expect(4);
      if (have_res) throw ParseError(line_no, "duplicate 'res'");
      L.pdn.r_lrl_ohm_per_tile = num(1);
      L.pdn.r_hpr_ohm_per_tile = num(2);
      L.pdn.r_via_ohm = num(3);
      have_res = true;
    } else if (kw == "strip") {
      expect(2);
      L.pdn.vstrip_x_um.push_back(num(1));
    } else if (kw == "pad") {
      expect(3);
      L.pdn.pad_xy_um.emplace_back(num(1), num(2));
    } else if (kw == "cell") {
      if (tok.size() < 8) throw ParseError(line_no, "'cell' expects id, x, y, three powers and at least one frame");
      CellInstance c;
      c.id = std::string(tok[1]);
      c.x_um = num(2);
      c.y_um = num(3);
      c.leakage_w = num(4);
      c.internal_w = num(5);
      c.switching_w = num(6);
      for (std::size_t i = 7; i < tok.size(); ++i) c.trace.frames.push_back(num(i));
      L.cells.push_back(std::move(c));
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(kw) + "'");
    }
  }
  if (!have_die) throw ParseError(line_no, "missing 'die'");
  if (!have_vdd) throw ParseError(line_no, "missing 'vdd'");
  if (!have_res) throw ParseError(line_no, "missing 'res'");

  if (auto violations = validate(L); !violations.empty()) {
    std::string msg = violations.front();
    for (std::size_t i = 1; i < violations.size(); ++i) msg += "; " + violations[i];
    throw DataError(msg);
  }
  return L;
}

struct GenSpec {
  double width_um = 16.0;
  double height_um = 16.0;
  std::size_t n_cells = 256;
  // Regular PDN when set; otherwise `strips_um` is used verbatim.
  std::optional<double> strip_pitch_um = 4.0;
  std::vector<double> strips_um;
  double power_scale_w = 1e-3;
  std::size_t t_sim = 4;
  std::uint64_t rng_seed = 1;

  double vdd_v = 1.0;
  double r_lrl_ohm_per_tile = 1.0;
  double r_hpr_ohm_per_tile = 0.01;
  double r_via_ohm = 0.05;
};

// Strips at pitch/2 + k*pitch while inside the die.
inline std::vector<double> regular_strips(double width_um, double pitch_um) {
  if (!(pitch_um > 0)) throw DataError("strip pitch must be positive");
  if (pitch_um > width_um) throw DataError("strip pitch larger than die width");
  std::vector<double> xs;
  for (std::size_t k = 0;; ++k) {
    const double x = pitch_um / 2 + static_cast<double>(k) * pitch_um;
    if (x > width_um) break;
    xs.push_back(x);
  }
  return xs;
}

// Pure function of the spec. Every value is rounded to the 9-digit text form
// so that parse(serialize(L)) == L holds exactly.
inline Layout generate_synthetic(const GenSpec& spec) {
  if (!(spec.width_um > 0) || !(spec.height_um > 0)) throw DataError("zero-area die");
  if (spec.n_cells < 1) throw DataError("n_cells must be at least 1");
  if (spec.t_sim < 1) throw DataError("t_sim must be at least 1");

  Layout L;
  L.width_um = round_g9(spec.width_um);
  L.height_um = round_g9(spec.height_um);
  L.pdn.vdd_v = round_g9(spec.vdd_v);
  L.pdn.r_lrl_ohm_per_tile = round_g9(spec.r_lrl_ohm_per_tile);
  L.pdn.r_hpr_ohm_per_tile = round_g9(spec.r_hpr_ohm_per_tile);
  L.pdn.r_via_ohm = round_g9(spec.r_via_ohm);

  std::vector<double> strips =
      spec.strip_pitch_um ? regular_strips(spec.width_um, *spec.strip_pitch_um) : spec.strips_um;
  if (strips.empty()) throw DataError("PDN needs at least one strip");
  for (double& x : strips) x = round_g9(x);
  std::sort(strips.begin(), strips.end());
  strips.erase(std::unique(strips.begin(), strips.end()), strips.end());
  L.pdn.vstrip_x_um = strips;
  // Pads at both ends of every strip.
  for (double x : strips) {
    L.pdn.pad_xy_um.emplace_back(x, 0.0);
    L.pdn.pad_xy_um.emplace_back(x, L.height_um);
  }

  Rng rng(spec.rng_seed);
  L.cells.reserve(spec.n_cells);
  for (std::size_t i = 0; i < spec.n_cells; ++i) {
    CellInstance c;
    c.id = "c" + std::to_string(i);
    c.x_um = round_g9(std::min(rng.uniform() * L.width_um, L.width_um));
    c.y_um = round_g9(std::min(rng.uniform() * L.height_um, L.height_um));
    double sum = 0.0;
    c.trace.frames.resize(spec.t_sim);
    for (auto& f : c.trace.frames) {
      f = round_g9(std::abs(rng.normal()) * spec.power_scale_w);
      sum += f;
    }
    // Average dynamic power split between internal and switching.
    const double mean = sum / static_cast<double>(spec.t_sim);
    const double share = rng.uniform(0.3, 0.7);
    c.internal_w = round_g9(share * mean);
    c.switching_w = round_g9((1.0 - share) * mean);
    c.leakage_w = round_g9(0.1 * spec.power_scale_w * rng.uniform());
    L.cells.push_back(std::move(c));
  }
  return L;
}

}  // namespace pdn
