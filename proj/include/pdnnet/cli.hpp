#pragma once

// Command-line front end: gen, simulate, build-graph, train, eval, predict,
// ablate, report. Exit codes: 0 ok, 1 usage, 2 data or validation error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "autodiff/checkpoint.hpp"
#include "training.hpp"

namespace pdn::cli {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

// key=value lines; '#' starts a comment, blank lines ignored.
inline KeyValues parse_key_values(std::string_view text, const std::string& source) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (auto line : split_char(text, '\n')) {
    ++line_no;
    std::string s(line);
    if (auto h = s.find('#'); h != std::string::npos) s.erase(h);
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw DataError(source + " line " + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string x) {
      const auto a = x.find_first_not_of(" \t\r"), b = x.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : x.substr(a, b - a + 1);
    };
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const fs::path& p) { return parse_key_values(read_text_file(p), p.string()); }

// Typed access to string-valued options.
class Args {
 public:
  explicit Args(CLI::App* app) : app_(app) {
    add("config", "", "key=value file; command-line flags win");
  }

  void add(const std::string& key, const std::string& def, const std::string& help) {
    order_.push_back(key);
    vals_[key] = def;
    app_->add_option("--" + key, vals_[key], help)->capture_default_str();
  }

  // Fills options not given on the command line from --config.
  void resolve() {
    if (vals_["config"].empty()) return;
    for (const auto& [k, v] : read_key_values(vals_["config"])) {
      if (k == "config") continue;
      auto it = vals_.find(k);
      if (it == vals_.end()) throw UsageError("unknown key '" + k + "' in " + vals_["config"]);
      if (app_->get_option("--" + k)->count() == 0) it->second = v;
    }
  }

  const std::string& str(const std::string& k) const { return vals_.at(k); }
  bool given(const std::string& k) const { return !vals_.at(k).empty(); }
  std::string need(const std::string& k) const {
    if (!given(k)) throw UsageError("--" + k + " is required");
    return str(k);
  }

  double num(const std::string& k) const { return to_double(k, str(k)); }
  std::size_t count(const std::string& k) const { return to_count(k, str(k)); }
  std::uint64_t u64(const std::string& k) const { return to_count(k, str(k)); }
  bool boolean(const std::string& k) const {
    const auto& v = str(k);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("--" + k + ": expected true or false, got '" + v + "'");
  }
  std::vector<std::string> words(const std::string& k) const {
    std::vector<std::string> out;
    const std::string& v = str(k);
    for (auto w : split_char(v, ','))
      if (!w.empty()) out.emplace_back(w);
    return out;
  }
  std::vector<double> nums(const std::string& k) const {
    std::vector<double> out;
    for (const auto& w : words(k)) out.push_back(to_double(k, w));
    return out;
  }
  std::vector<std::size_t> counts(const std::string& k) const {
    std::vector<std::size_t> out;
    for (const auto& w : words(k)) out.push_back(to_count(k, w));
    return out;
  }

  std::string dump() const {
    std::string out;
    for (const auto& k : order_)
      if (k != "config") out += k + "=" + vals_.at(k) + "\n";
    return out;
  }

 private:
  static double to_double(const std::string& k, const std::string& v) {
    try {
      return parse_double(v, "--" + k);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  static std::size_t to_count(const std::string& k, const std::string& v) {
    const double d = to_double(k, v);
    if (d < 0 || d != std::floor(d)) throw UsageError("--" + k + ": expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::size_t>(d);
  }

  CLI::App* app_;
  std::vector<std::string> order_;
  std::map<std::string, std::string> vals_;
};

// --------------------------------------------------------------- helpers

inline Layout read_layout_file(const fs::path& p) {
  const std::string text = read_text_file(p);
  try {
    return parse_layout(text);
  } catch (const DataError& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void add_grid_keys(Args& a) {
  a.add("dx", "1", "tile width (um)");
  a.add("dy", "1", "tile height (um)");
}

inline void add_training_keys(Args& a) {
  a.add("precision", "float", "float or double");
  a.add("epochs", "200", "training epochs");
  a.add("batch_size", "1", "samples per optimizer step");
  a.add("lr0", "0.0008", "initial learning rate");
  a.add("beta1", "0.9", "Adam beta1");
  a.add("beta2", "0.999", "Adam beta2");
  a.add("weight_decay", "0.0001", "decoupled weight decay");
  a.add("seed", "1", "rng seed");
  a.add("w_l1", "1", "L1 loss weight");
  a.add("w_dice", "1", "Dice loss weight");
  a.add("holdout", "true", "hold out 20% for validation");
  a.add("variant", "pdnnet", "model variant");
  a.add("d_hidden", "32", "GNN hidden width");
  a.add("n_vd", "2", "voltage-drop blocks");
  a.add("n_ni", "2", "neighbor-influence blocks");
  a.add("h_f", "32", "CNN canvas height");
  a.add("w_f", "32", "CNN canvas width");
  a.add("cnn_levels", "3", "CNN encoder levels");
  a.add("cnn_channels", "8,16,32", "CNN channels per level");
  a.add("fusion_hidden", "16", "fusion MLP width");
}

template <class Get>
ModelConfig model_config_from(const Get& get, std::size_t c_in) {
  ModelConfig m;
  auto count = [&](const std::string& k) {
    const double d = parse_double(get(k), k);
    if (d < 0 || d != std::floor(d)) throw UsageError(k + ": expected a nonnegative integer");
    return static_cast<std::size_t>(d);
  };
  m.c_in = c_in;
  m.d_hidden = count("d_hidden");
  m.n_vd_blocks = count("n_vd");
  m.n_ni_blocks = count("n_ni");
  m.h_f = count("h_f");
  m.w_f = count("w_f");
  m.cnn_levels = count("cnn_levels");
  m.cnn_channels.clear();
  const std::string channels = get("cnn_channels");
  for (auto w : split_char(channels, ','))
    if (!w.empty()) m.cnn_channels.push_back(static_cast<std::size_t>(parse_double(w, "cnn_channels")));
  m.fusion_hidden = count("fusion_hidden");
  return variant_config(m, get("variant"));
}

inline TrainConfig train_config_from(const Args& a, std::size_t c_in) {
  TrainConfig c;
  c.epochs = a.count("epochs");
  c.batch_size = a.count("batch_size");
  c.lr0 = a.num("lr0");
  c.beta1 = a.num("beta1");
  c.beta2 = a.num("beta2");
  c.weight_decay = a.num("weight_decay");
  c.rng_seed = a.u64("seed");
  c.w_l1 = a.num("w_l1");
  c.w_dice = a.num("w_dice");
  c.holdout = a.boolean("holdout");
  c.model = model_config_from([&](const std::string& k) { return a.str(k); }, c_in);
  c.validate();
  return c;
}

inline bool use_double(const std::string& precision) {
  if (precision == "double") return true;
  if (precision == "float") return false;
  throw UsageError("precision must be float or double, got '" + precision + "'");
}

inline std::size_t channels_of(const std::vector<Sample>& samples) {
  const std::size_t c = samples.front().graph.n_channels();
  for (const auto& s : samples)
    if (s.graph.n_channels() != c) throw DataError("sample " + s.id + " has a different channel count");
  return c;
}

// Model from a run directory (config.txt + best.ckpt).
template <class T>
PdnNet<T> load_run_model(const fs::path& run, std::size_t c_in) {
  const auto kv = read_key_values(run / "config.txt");
  auto get = [&](const std::string& k) -> std::string {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError((run / "config.txt").string() + ": missing key " + k);
    return it->second;
  };
  PdnNet<T> m(model_config_from(get, c_in), 0);
  m.load_state(ad::load_checkpoint(run / "best.ckpt"));
  return m;
}

inline std::string run_precision(const fs::path& run) {
  const auto kv = read_key_values(run / "config.txt");
  auto it = kv.find("precision");
  return it == kv.end() ? "float" : it->second;
}

// -------------------------------------------------------------- commands

struct Io {
  std::ostream& out;
  std::ostream& err;
};

inline void cmd_gen(const Args& a, Io io) {
  BenchmarkSpec spec;
  spec.n_samples = a.count("n");
  spec.die_um = a.num("die");
  spec.n_cells = a.count("cells");
  spec.t_sim = a.count("t_sim");
  spec.power_scale_w = a.num("power");
  spec.pitches_um = a.nums("pitches");
  spec.irregular = a.boolean("irregular");
  spec.seed = a.u64("seed");
  spec.id_prefix = a.str("prefix");
  const fs::path out = a.need("out");
  const auto layouts = generate_benchmark(spec);
  for (const auto& nl : layouts) write_text_file(out / "samples" / nl.id / "layout.txt", serialize_layout(nl.layout));
  io.out << "wrote " << layouts.size() << " layouts to " << (out / "samples").string() << "\n";
}

inline void cmd_simulate(const Args& a, Io io) {
  const double dx = a.num("dx"), dy = a.num("dy"), tol = a.num("tol");
  if (a.given("layout") == a.given("data")) throw UsageError("give exactly one of --layout or --data");
  if (a.given("layout")) {
    const fs::path out = a.need("out");
    const Layout L = read_layout_file(a.str("layout"));
    const auto dyn = simulate_dynamic(L, tile_grid(L, dx, dy), tol);
    write_map_csv(out / "irdrop_peak.csv", dyn.peak);
    write_pgm16(out / "irdrop_peak.pgm", dyn.peak);
    if (a.boolean("frames"))
      for (std::size_t k = 0; k < dyn.frames.size(); ++k)
        write_map_csv(out / ("irdrop_frame_" + std::to_string(k) + ".csv"), dyn.frames[k]);
    double peak = 0;
    for (double v : dyn.peak.values) peak = std::max(peak, v);
    io.out << "peak drop " << fmt_g9(peak) << " V over " << dyn.peak.rows << "x" << dyn.peak.cols << " tiles\n";
    return;
  }
  const fs::path root = a.str("data");
  const auto ids = list_sample_ids(root);
  parallel_for(ids.size(), a.count("jobs"), [&](std::size_t k) {
    const auto dir = root / "samples" / ids[k];
    const Layout L = read_layout_file(dir / "layout.txt");
    const auto dyn = simulate_dynamic(L, tile_grid(L, dx, dy), tol);
    write_map_csv(dir / "label.csv", dyn.peak);
    write_pgm16(dir / "irdrop_peak.pgm", dyn.peak);
  });
  io.out << "simulated " << ids.size() << " samples\n";
}

inline void cmd_build_graph(const Args& a, Io io) {
  const double dx = a.num("dx"), dy = a.num("dy");
  if (a.given("layout") == a.given("data")) throw UsageError("give exactly one of --layout or --data");
  auto build = [&](const fs::path& layout, const fs::path& out) {
    const Layout L = read_layout_file(layout);
    const auto g = build_graph(tile_grid(L, dx, dy), L);
    write_graph_csv(out / "graph.csv", g);
    write_text_file(out / "graph.pgm", format_graph_pgm(g));
    return g;
  };
  if (a.given("layout")) {
    const auto g = build(a.str("layout"), a.need("out"));
    io.out << g.n_nodes() << " nodes, " << g.edges.size() << " edges, " << g.n_channels() << " channels\n";
    return;
  }
  const fs::path root = a.str("data");
  const auto ids = list_sample_ids(root);
  parallel_for(ids.size(), a.count("jobs"), [&](std::size_t k) {
    const auto dir = root / "samples" / ids[k];
    build(dir / "layout.txt", dir);
  });
  io.out << "built " << ids.size() << " graphs\n";
}

template <class T>
void train_run(const Args& a, const std::vector<Sample>& data, Io io) {
  const TrainConfig cfg = train_config_from(a, channels_of(data));
  const fs::path run = a.need("run");
  write_text_file(run / "config.txt", a.dump());
  const std::size_t every = std::max<std::size_t>(1, cfg.epochs / 10);
  const auto res = train<T>(data, cfg, [&](const EpochRecord& r) {
    if (r.epoch == 1 || r.epoch % every == 0 || r.epoch == cfg.epochs)
      io.out << "epoch " << r.epoch << " train_loss " << fmt_g9(r.train_loss) << " train_nmae " << fmt_g9(r.train_nmae)
             << " val_nmae " << fmt_g9(r.val_nmae) << "\n";
  });
  write_text_file(run / "history.csv", format_history_csv(res.history));
  ad::save_checkpoint(run / "best.ckpt", res.model.state());
  io.out << "best epoch " << res.best_epoch << ", " << res.model.parameter_count() << " parameters, checkpoint "
         << (run / "best.ckpt").string() << "\n";
}

inline void cmd_train(const Args& a, Io io) {
  const auto data = load_dataset(a.need("data"));
  if (use_double(a.str("precision")))
    train_run<double>(a, data, io);
  else
    train_run<float>(a, data, io);
}

inline void print_summary(const EvalResult& ev, Io io) {
  const auto m = ev.summary.mean.as_array();
  for (std::size_t k = 0; k < m.size(); ++k) {
    io.out << kMetricNames[k] << " " << fmt_g9(m[k]);
    if (ev.summary.excluded[k]) io.out << " (" << ev.summary.excluded[k] << " undefined excluded)";
    io.out << "\n";
  }
  io.out << "mean-predictor NMAE " << fmt_g9(ev.baseline_nmae) << "\n";
}

template <class T>
void eval_run(const Args& a, const std::vector<Sample>& data, Io io) {
  const fs::path run = a.need("run");
  const auto model = load_run_model<T>(run, channels_of(data));
  const auto ev = evaluate(model, data, a.count("jobs"));
  const fs::path out = a.given("out") ? fs::path(a.str("out")) : run / "metrics.csv";
  write_text_file(out, format_metrics_csv(ev));
  if (a.boolean("preds"))
    for (const auto& s : data) write_map_csv(run / "preds" / (s.id + ".csv"), predict_normalized(model, s));
  print_summary(ev, io);
  io.out << "wrote " << out.string() << "\n";
}

inline void cmd_eval(const Args& a, Io io) {
  const auto data = load_dataset(a.need("data"));
  if (use_double(run_precision(a.need("run"))))
    eval_run<double>(a, data, io);
  else
    eval_run<float>(a, data, io);
}

template <class T>
void predict_run(const Args& a, Io io) {
  const fs::path run = a.need("run"), out = a.need("out");
  const int sources = int(a.given("sample")) + int(a.given("layout")) + int(a.given("graph"));
  if (sources != 1) throw UsageError("give exactly one of --sample, --layout or --graph");
  Sample s;
  bool labelled = false;
  if (a.given("sample")) {
    const fs::path dir = a.str("sample");
    if (fs::exists(dir / "label.csv")) {
      s = make_sample(dir.filename().string(), read_graph_csv(dir / "graph.csv"), read_map_csv(dir / "label.csv"));
      labelled = true;
    } else {
      s = unlabeled_sample(dir.filename().string(), read_graph_csv(dir / "graph.csv"));
    }
  } else if (a.given("layout")) {
    const Layout L = read_layout_file(a.str("layout"));
    s = unlabeled_sample("layout", build_graph(tile_grid(L, a.num("dx"), a.num("dy")), L));
  } else {
    s = unlabeled_sample("graph", read_graph_csv(a.str("graph")));
  }
  const auto model = load_run_model<T>(run, s.graph.n_channels());
  const Map2D norm = predict_normalized(model, s);
  const Map2D pred = labelled ? to_volts(norm, s) : norm;
  write_map_csv(out / "pred.csv", pred);
  write_pgm16(out / "pred.pgm", pred);
  io.out << "wrote " << (out / "pred.csv").string() << (labelled ? " (volts)" : " (normalized)") << "\n";
}

inline void cmd_predict(const Args& a, Io io) {
  if (use_double(run_precision(a.need("run"))))
    predict_run<double>(a, io);
  else
    predict_run<float>(a, io);
}

template <class T>
void ablate_run(const Args& a, Io io) {
  const auto train_set = load_dataset(a.need("train_data"));
  const auto test_set = load_dataset(a.need("test_data"));
  const TrainConfig cfg = train_config_from(a, channels_of(train_set));
  if (channels_of(test_set) != cfg.model.c_in) throw DataError("train and test sets differ in channel count");
  const fs::path run = a.need("run");
  std::vector<std::uint64_t> seeds;
  for (auto s : a.counts("seeds")) seeds.push_back(s);
  write_text_file(run / "config.txt", a.dump());
  const auto rows = run_ablation<T>(train_set, test_set, cfg, a.words("variants"), seeds, a.count("jobs"),
                                    [&](const std::string& line) { io.out << line << "\n"; });
  write_text_file(run / "ablation.csv", format_ablation_csv(rows));
  write_text_file(run / "ablation_raw.csv", format_ablation_raw_csv(rows));
  io.out << format_ablation_csv(rows);
  for (const auto& v : ablation_ordering_violations(rows)) io.out << "FLAG: " << v << "\n";
}

inline void cmd_ablate(const Args& a, Io io) {
  if (use_double(a.str("precision")))
    ablate_run<double>(a, io);
  else
    ablate_run<float>(a, io);
}

inline void cmd_report(const Args& a, Io io) {
  const auto data = load_dataset(a.need("data"));
  const fs::path preds = a.need("preds"), out = a.need("out");
  std::vector<Map2D> maps;
  for (const auto& s : data) {
    const auto p = preds / (s.id + ".csv");
    maps.push_back(read_map_csv(p));
    if (maps.back().rows != s.graph.n_h || maps.back().cols != s.graph.n_w)
      throw DataError(p.string() + ": shape does not match sample " + s.id);
  }
  const auto ev = evaluate_predictions(data, maps);
  write_text_file(out, format_metrics_csv(ev));
  print_summary(ev, io);
  io.out << "wrote " << out.string() << "\n";
}

// ------------------------------------------------------------- dispatch

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"PDN IR-drop workbench"};
  app.set_version_flag("--version", std::string(ad::kCheckpointMagic));
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    std::unique_ptr<Args> args;
    void (*fn)(const Args&, Io);
  };
  std::vector<Command> cmds;
  auto add = [&](const std::string& name, const std::string& help, void (*fn)(const Args&, Io)) -> Args& {
    auto* sub = app.add_subcommand(name, help);
    cmds.push_back({sub, std::make_unique<Args>(sub), fn});
    cmds.back().args->add("jobs", "1", "worker threads");
    return *cmds.back().args;
  };

  {
    auto& a = add("gen", "generate synthetic layouts", cmd_gen);
    a.add("out", "", "dataset directory");
    a.add("seed", "1", "rng seed");
    a.add("n", "16", "number of samples");
    a.add("die", "16", "die edge (um)");
    a.add("cells", "256", "cells per layout");
    a.add("t_sim", "4", "power frames");
    a.add("power", "0.001", "power scale (W)");
    a.add("pitches", "3,5,8", "regular strip pitches (um)");
    a.add("irregular", "true", "alternate with irregular strips");
    a.add("prefix", "s", "sample id prefix");
  }
  {
    auto& a = add("simulate", "oracle IR-drop maps", cmd_simulate);
    a.add("layout", "", "layout file");
    a.add("data", "", "dataset directory (writes label.csv per sample)");
    a.add("out", "", "output directory for --layout");
    add_grid_keys(a);
    a.add("tol", "1e-10", "solver tolerance");
    a.add("frames", "false", "also write per-frame maps");
  }
  {
    auto& a = add("build-graph", "tile graph and features", cmd_build_graph);
    a.add("layout", "", "layout file");
    a.add("data", "", "dataset directory (writes graph.csv per sample)");
    a.add("out", "", "output directory for --layout");
    add_grid_keys(a);
  }
  {
    auto& a = add("train", "train a model", cmd_train);
    a.add("data", "", "dataset directory");
    a.add("run", "", "run directory");
    add_training_keys(a);
  }
  {
    auto& a = add("eval", "evaluate a run on a dataset", cmd_eval);
    a.add("data", "", "dataset directory");
    a.add("run", "", "run directory");
    a.add("out", "", "metrics csv (default <run>/metrics.csv)");
    a.add("preds", "true", "write <run>/preds/<id>.csv");
  }
  {
    auto& a = add("predict", "predict one map", cmd_predict);
    a.add("run", "", "run directory");
    a.add("sample", "", "sample directory");
    a.add("layout", "", "layout file");
    a.add("graph", "", "graph csv");
    a.add("out", "", "output directory");
    add_grid_keys(a);
  }
  {
    auto& a = add("ablate", "variant comparison", cmd_ablate);
    a.add("train_data", "", "training dataset directory");
    a.add("test_data", "", "test dataset directory");
    a.add("run", "", "run directory");
    std::string all;
    for (const auto& v : kAblationVariants) all += (all.empty() ? "" : ",") + v;
    a.add("variants", all, "comma-separated variants");
    a.add("seeds", "1,2,3", "comma-separated seeds");
    add_training_keys(a);
  }
  {
    auto& a = add("report", "metrics from prediction maps", cmd_report);
    a.add("data", "", "dataset directory");
    a.add("preds", "", "directory of <id>.csv predictions (normalized)");
    a.add("out", "", "metrics csv");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  for (auto& c : cmds) {
    if (!c.app->parsed()) continue;
    try {
      c.args->resolve();
      out << "# " << c.app->get_name() << "\n" << c.args->dump();
      out.flush();
      c.fn(*c.args, Io{out, err});
      return 0;
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}

}  // namespace pdn::cli
