#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "pdnnet/layout.hpp"

using namespace pdn;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kMinimal =
    "die 10 10\n"
    "vdd 1\n"
    "res 1 0.01 0.05\n"
    "strip 5\n"
    "pad 5 0\n"
    "cell a 2 3 0.1 0.2 0.3 1 2\n";

}  // namespace

TEST_CASE("minimal layout file parses", "[layout]") {
  const Layout L = parse_layout(kMinimal);
  CHECK(L.cells.size() == 1);
  CHECK(L.pdn.vstrip_x_um == std::vector<double>{5.0});
  CHECK(L.t_sim() == 2);
  CHECK(L.cells[0].trace.frames == std::vector<double>{1.0, 2.0});
  CHECK(validate(L).empty());
}

TEST_CASE("cell outside the die is rejected", "[layout]") {
  std::string text = kMinimal;
  text.replace(text.find("cell a 2"), 8, "cell a 12");
  try {
    parse_layout(text);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cell outside die") != std::string::npos);
    CHECK(msg.find("cell a") != std::string::npos);
  }
}

TEST_CASE("syntax errors carry the line number", "[layout]") {
  std::string text = kMinimal;
  text += "via 1 2\n";
  try {
    parse_layout(text);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
    CHECK(std::string(e.what()).find("unknown directive") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_layout("die 10 x\nvdd 1\nres 1 1 1\n"), ParseError);
  CHECK_THROWS_AS(parse_layout("vdd 1\nres 1 1 1\n"), ParseError);
}

TEST_CASE("comments and blank lines are ignored", "[layout]") {
  const std::string text = std::string("# header\n\n") + kMinimal + "   # trailing\n";
  CHECK(parse_layout(text) == parse_layout(kMinimal));
}

TEST_CASE("committed fixture round-trips byte-identically", "[layout]") {
  const std::string text = read_file(PDNNET_TEST_DATA "/three_cells.txt");
  REQUIRE(!text.empty());
  const Layout L = parse_layout(text);
  CHECK(L.cells.size() == 3);
  CHECK(serialize_layout(L) == text);
}

TEST_CASE("validate names each broken rule", "[layout]") {
  Layout L = generate_synthetic(GenSpec{});
  CHECK(validate(L).empty());

  Layout neg = L;
  neg.cells[5].leakage_w = -1e-3;
  auto v = validate(neg);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("cell c5") != std::string::npos);
  CHECK(v[0].find("leakage") != std::string::npos);

  Layout off = L;
  off.pdn.pad_xy_um[0].first = 0.123;
  v = validate(off);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("pad off-strip") != std::string::npos);

  Layout dup = L;
  dup.cells[1].id = dup.cells[0].id;
  CHECK(validate(dup).size() == 1);

  Layout ragged = L;
  ragged.cells[2].trace.frames.push_back(0.0);
  CHECK(validate(ragged).size() == 1);
}

TEST_CASE("regular strip placement is centered on the pitch", "[layout]") {
  GenSpec spec;
  spec.width_um = 16;
  spec.strip_pitch_um = 4;
  const Layout L = generate_synthetic(spec);
  CHECK(L.pdn.vstrip_x_um == std::vector<double>{2, 6, 10, 14});
  CHECK(L.pdn.pad_xy_um.size() == 8);

  spec.strip_pitch_um = 20;
  CHECK_THROWS_AS(generate_synthetic(spec), DataError);
  spec.strip_pitch_um = 4;
  spec.width_um = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), DataError);
}

TEST_CASE("irregular strip lists are honored", "[layout]") {
  GenSpec spec;
  spec.strip_pitch_um.reset();
  spec.strips_um = {1.5, 3.0, 11.25};
  const Layout L = generate_synthetic(spec);
  CHECK(L.pdn.vstrip_x_um == spec.strips_um);
  CHECK(validate(L).empty());
}

TEST_CASE("generator is deterministic and respects invariants", "[layout]") {
  GenSpec spec;
  spec.rng_seed = 7;
  CHECK(serialize_layout(generate_synthetic(spec)) == serialize_layout(generate_synthetic(spec)));

  GenSpec other = spec;
  other.rng_seed = 8;
  CHECK(serialize_layout(generate_synthetic(other)) != serialize_layout(generate_synthetic(spec)));

  spec.n_cells = 100;
  spec.t_sim = 8;
  const Layout L = generate_synthetic(spec);
  REQUIRE(L.cells.size() == 100);
  for (const auto& c : L.cells) {
    CHECK(c.trace.frames.size() == 8);
    CHECK(c.leakage_w >= 0);
    CHECK(c.internal_w >= 0);
    CHECK(c.switching_w >= 0);
    for (double f : c.trace.frames) CHECK(f >= 0);
  }
}

TEST_CASE("parse inverts serialize on generated layouts", "[layout][property]") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    GenSpec spec;
    spec.rng_seed = seed;
    spec.n_cells = 1 + seed * 3;
    spec.t_sim = 1 + seed % 6;
    spec.width_um = 5.0 + static_cast<double>(seed);
    spec.height_um = 3.0 + 0.37 * static_cast<double>(seed);
    spec.strip_pitch_um = 1.0 + 0.13 * static_cast<double>(seed % 5);
    spec.power_scale_w = 1e-4 * static_cast<double>(seed + 1);
    const Layout L = generate_synthetic(spec);
    INFO("seed " << seed);
    REQUIRE(validate(L).empty());
    CHECK(parse_layout(serialize_layout(L)) == L);
  }
}
