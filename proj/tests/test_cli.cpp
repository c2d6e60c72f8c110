#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "pdnnet/cli.hpp"

using namespace pdn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "pdnnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pdnnet_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) m[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  return m;
}

const std::vector<std::string> kTinyGen{"--n", "16", "--die", "6", "--cells", "40", "--t_sim", "2", "--pitches", "2,3"};
const std::vector<std::string> kTinyModel{"--epochs", "3",   "--h_f",        "8", "--w_f",          "8",
                                          "--d_hidden", "6", "--cnn_channels", "2,2,2", "--fusion_hidden", "4"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("version and usage errors") {
  auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find("PDNF1") != std::string::npos);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"gen"}).code == 1);  // --out missing
  CHECK(run({"gen", "--out", scratch("u").string(), "--n", "abc"}).code == 1);
  CHECK(run({"gen", "--out", scratch("u").string(), "--bogus", "1"}).code == 1);
  CHECK(run({"simulate", "--out", "x"}).code == 1);  // neither --layout nor --data
}

TEST_CASE("missing layout is a data error naming the path") {
  const auto r = run({"simulate", "--layout", "missing.txt", "--out", scratch("m").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.txt") != std::string::npos);
}

TEST_CASE("malformed layout names the path and line") {
  const auto dir = scratch("bad");
  write_text_file(dir / "bad.txt", "die 4 4\nvdd 1\nwhat is this\n");
  const auto r = run({"build-graph", "--layout", (dir / "bad.txt").string(), "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.txt") != std::string::npos);
  CHECK(r.err.find("line") != std::string::npos);
}

TEST_CASE("gen is deterministic") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run({"gen", "--seed", "7", "--out", a.string()}).code == 0);
  REQUIRE(run({"gen", "--seed", "7", "--out", b.string()}).code == 0);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(snapshot(a).size() == 16);
  const auto first = snapshot(a);
  REQUIRE(run({"gen", "--seed", "7", "--out", a.string()}).code == 0);
  CHECK(snapshot(a) == first);
}

TEST_CASE("resolved configuration is printed and config files lose to flags") {
  const auto dir = scratch("cfg");
  write_text_file(dir / "c.txt", "# gen settings\nn = 2\nseed=5\ncells=30\ndie=6\n");
  const auto r = run({"gen", "--config", (dir / "c.txt").string(), "--n", "3", "--out", (dir / "d").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("# gen\n"));
  CHECK(r.out.find("n=3\n") != std::string::npos);
  CHECK(r.out.find("seed=5\n") != std::string::npos);
  CHECK(snapshot(dir / "d").size() == 3);

  write_text_file(dir / "bad.txt", "nonsense=1\n");
  CHECK(run({"gen", "--config", (dir / "bad.txt").string(), "--out", dir.string()}).code == 1);
}

TEST_CASE("single layout simulate and build-graph artifacts") {
  const auto dir = scratch("single");
  REQUIRE(run(cat({"gen", "--out", dir.string()}, {"--n", "1", "--die", "6", "--cells", "30"})).code == 0);
  const auto layout = (dir / "samples" / "s000" / "layout.txt").string();
  const auto before = read_text_file(layout);
  REQUIRE(run({"simulate", "--layout", layout, "--out", (dir / "sim").string(), "--frames", "true"}).code == 0);
  const auto peak = read_map_csv(dir / "sim" / "irdrop_peak.csv");
  CHECK(peak.rows == 6);
  CHECK(peak.cols == 6);
  CHECK(fs::exists(dir / "sim" / "irdrop_frame_3.csv"));
  CHECK(read_text_file(dir / "sim" / "irdrop_peak.pgm").starts_with("P5\n6 6\n65535\n"));
  REQUIRE(run({"build-graph", "--layout", layout, "--out", (dir / "g").string()}).code == 0);
  CHECK(read_graph_csv(dir / "g" / "graph.csv").n_nodes() == 36);
  CHECK(fs::exists(dir / "g" / "graph.pgm"));
  CHECK(read_text_file(layout) == before);

  const auto first = snapshot(dir / "sim");
  REQUIRE(run({"simulate", "--layout", layout, "--out", (dir / "sim").string(), "--frames", "true"}).code == 0);
  CHECK(snapshot(dir / "sim") == first);
}

TEST_CASE("end-to-end pipeline on 16 tiny samples", "[slow]") {
  const auto dir = scratch("e2e");
  const auto data = (dir / "data").string(), runp = (dir / "run").string();
  REQUIRE(run(cat({"gen", "--out", data, "--seed", "3"}, kTinyGen)).code == 0);
  REQUIRE(run({"simulate", "--data", data, "--jobs", "2"}).code == 0);
  REQUIRE(run({"build-graph", "--data", data}).code == 0);
  const auto tr = run(cat({"train", "--data", data, "--run", runp}, kTinyModel));
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  for (const char* f : {"config.txt", "history.csv", "best.ckpt"}) CHECK(fs::exists(dir / "run" / f));
  const auto ev = run({"eval", "--data", data, "--run", runp});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("mean-predictor NMAE") != std::string::npos);

  const auto metrics = read_text_file(dir / "run" / "metrics.csv");
  const auto lines = split_char(metrics, '\n');
  CHECK(lines[0] == "id,NMAE,R2,PSNR,SSIM,Pear,Spea,Kend,AUC");
  CHECK(split_char(lines[1], ',').size() == 9);
  CHECK(std::string(lines[17]).starts_with("MEAN,"));

  const auto pr = run({"predict", "--run", runp, "--sample", data + "/samples/s004", "--out", (dir / "p").string()});
  REQUIRE(pr.code == 0);
  CHECK(read_map_csv(dir / "p" / "pred.csv").rows == 6);
  CHECK(fs::exists(dir / "p" / "pred.pgm"));
  const auto pl = run({"predict", "--run", runp, "--layout", data + "/samples/s004/layout.txt", "--out",
                       (dir / "p2").string()});
  CHECK(pl.code == 0);

  const auto rp = run({"report", "--data", data, "--preds", runp + "/preds", "--out", (dir / "m.csv").string()});
  CHECK(rp.code == 0);
  CHECK(read_text_file(dir / "m.csv").starts_with("id,NMAE"));

  // second full run reproduces the artifacts byte for byte
  const auto runq = (dir / "run2").string();
  REQUIRE(run(cat({"train", "--data", data, "--run", runq}, kTinyModel)).code == 0);
  REQUIRE(run({"eval", "--data", data, "--run", runq}).code == 0);
  CHECK(read_text_file(dir / "run2" / "metrics.csv") == metrics);
  CHECK(read_text_file(dir / "run2" / "best.ckpt") == read_text_file(dir / "run" / "best.ckpt"));

  // config.txt replays the run
  const auto runr = (dir / "run3").string();
  REQUIRE(run({"train", "--data", data, "--config", runp + "/config.txt", "--run", runr}).code == 0);
  CHECK(read_text_file(dir / "run3" / "history.csv") == read_text_file(dir / "run" / "history.csv"));

  const auto ab = run(cat({"ablate", "--train_data", data, "--test_data", data, "--run", (dir / "ab").string(),
                           "--variants", "pdnnet,gnn_single", "--seeds", "1,2", "--epochs", "1"},
                          {"--h_f", "8", "--w_f", "8", "--d_hidden", "4", "--cnn_channels", "2,2,2"}));
  INFO(ab.err);
  REQUIRE(ab.code == 0);
  const auto table = read_text_file(dir / "ab" / "ablation.csv");
  CHECK(split_char(table, '\n').size() >= 3);
  CHECK(fs::exists(dir / "ab" / "ablation_raw.csv"));
  CHECK(run({"ablate", "--train_data", data, "--test_data", data, "--run", (dir / "ab").string(), "--variants",
             "bogus"})
            .code == 2);
}

TEST_CASE("eval without a run directory is a data error") {
  const auto dir = scratch("norun");
  REQUIRE(run(cat({"gen", "--out", dir.string()}, {"--n", "2", "--die", "6", "--cells", "30"})).code == 0);
  REQUIRE(run({"simulate", "--data", dir.string()}).code == 0);
  REQUIRE(run({"build-graph", "--data", dir.string()}).code == 0);
  const auto r = run({"eval", "--data", dir.string(), "--run", (dir / "nope").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("nope") != std::string::npos);
}
