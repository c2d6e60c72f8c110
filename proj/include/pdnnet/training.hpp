#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "autodiff/checkpoint.hpp"
#include "autodiff/optim.hpp"
#include "io.hpp"
#include "ir_oracle.hpp"
#include "layout.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "pdn_graph.hpp"

namespace pdn {

// ----------------------------------------------------------------- samples

struct Sample {
  std::string id;
  PdnGraph graph;
  Map2D label;                  // peak drop, volts
  double label_lo = 0, label_hi = 0;
  std::vector<double> target;   // label min-max scaled to [0, 1]
  double feature_scale = 1.0;   // largest feature value
};

inline double feature_scale_of(const PdnGraph& g) {
  double fmax = 0;
  for (double f : g.features) fmax = std::max(fmax, std::abs(f));
  return fmax > 0 ? fmax : 1.0;
}

// For inference without a label: target and label range are zero.
inline Sample unlabeled_sample(std::string id, PdnGraph graph) {
  Sample s;
  s.id = std::move(id);
  s.label = Map2D(graph.n_h, graph.n_w);
  s.target.assign(graph.n_nodes(), 0.0);
  s.feature_scale = feature_scale_of(graph);
  s.graph = std::move(graph);
  return s;
}

inline Sample make_sample(std::string id, PdnGraph graph, Map2D label) {
  if (label.rows != graph.n_h || label.cols != graph.n_w)
    throw DataError("sample " + id + ": label is " + std::to_string(label.rows) + "x" + std::to_string(label.cols) +
                    ", graph is " + std::to_string(graph.n_h) + "x" + std::to_string(graph.n_w));
  Sample s;
  s.id = std::move(id);
  const auto [lo, hi] = std::minmax_element(label.values.begin(), label.values.end());
  s.label_lo = *lo;
  s.label_hi = *hi;
  const double range = s.label_hi - s.label_lo;
  s.target.resize(label.size());
  for (std::size_t k = 0; k < label.size(); ++k) s.target[k] = range > 0 ? (label.values[k] - s.label_lo) / range : 0.0;
  s.feature_scale = feature_scale_of(graph);
  s.graph = std::move(graph);
  s.label = std::move(label);
  return s;
}

inline Sample sample_from_layout(std::string id, const Layout& L, double dx_um = 1.0, double dy_um = 1.0) {
  const auto grid = tile_grid(L, dx_um, dy_um);
  return make_sample(std::move(id), build_graph(grid, L), simulate_dynamic(L, grid).peak);
}

// samples/<id>/{layout.txt, graph.csv, label.csv}
inline void save_sample(const std::filesystem::path& root, const Sample& s, const Layout* layout = nullptr) {
  const auto dir = root / "samples" / s.id;
  if (layout) write_text_file(dir / "layout.txt", serialize_layout(*layout));
  write_graph_csv(dir / "graph.csv", s.graph);
  write_map_csv(dir / "label.csv", s.label);
}

inline std::vector<std::string> list_sample_ids(const std::filesystem::path& root) {
  const auto dir = root / "samples";
  if (!std::filesystem::is_directory(dir)) throw DataError("no samples directory under " + root.string());
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no samples in " + dir.string());
  return ids;
}

inline Sample load_sample(const std::filesystem::path& root, const std::string& id) {
  const auto dir = root / "samples" / id;
  return make_sample(id, read_graph_csv(dir / "graph.csv"), read_map_csv(dir / "label.csv"));
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& root) {
  std::vector<Sample> out;
  for (const auto& id : list_sample_ids(root)) out.push_back(load_sample(root, id));
  return out;
}

// ------------------------------------------------------------- benchmark

// Synthetic benchmark: alternating regular-pitch and irregular strip sets.
struct BenchmarkSpec {
  std::size_t n_samples = 64;
  double die_um = 16.0;
  std::size_t n_cells = 256;
  std::size_t t_sim = 4;
  double power_scale_w = 1e-3;
  std::vector<double> pitches_um{3.0, 5.0, 8.0};
  bool irregular = true;  // every other sample gets random strips
  std::uint64_t seed = 1;
  std::string id_prefix = "s";
};

inline std::vector<double> random_strips(Rng& rng, double width_um) {
  const std::size_t k = 2 + rng.below(3);
  std::vector<double> xs;
  for (int attempt = 0; xs.size() < k && attempt < 1000; ++attempt) {
    const double x = round_g9(0.5 + rng.uniform() * (width_um - 1.0));
    if (std::all_of(xs.begin(), xs.end(), [&](double y) { return std::abs(x - y) >= 1.0; })) xs.push_back(x);
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

struct NamedLayout {
  std::string id;
  Layout layout;
};

inline std::vector<NamedLayout> generate_benchmark(const BenchmarkSpec& spec) {
  if (spec.pitches_um.empty() && !spec.irregular) throw std::invalid_argument("benchmark needs pitches or irregular");
  Rng rng(spec.seed);
  std::vector<NamedLayout> out;
  const int width = std::max<int>(3, static_cast<int>(std::to_string(spec.n_samples).size()));
  for (std::size_t k = 0; k < spec.n_samples; ++k) {
    GenSpec g;
    g.width_um = g.height_um = spec.die_um;
    g.n_cells = spec.n_cells;
    g.t_sim = spec.t_sim;
    g.power_scale_w = spec.power_scale_w;
    g.rng_seed = rng.next();
    const bool irregular = spec.irregular && (spec.pitches_um.empty() || k % 2 == 1);
    if (irregular) {
      g.strip_pitch_um.reset();
      g.strips_um = random_strips(rng, spec.die_um);
    } else {
      g.strip_pitch_um = spec.pitches_um[(spec.irregular ? k / 2 : k) % spec.pitches_um.size()];
    }
    std::string num = std::to_string(k);
    num.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0');
    out.push_back({spec.id_prefix + num, generate_synthetic(g)});
  }
  return out;
}

// ---------------------------------------------------------------- parallel

// Runs f(i) for i in [0, n) on up to `jobs` threads; results must be written
// to per-index slots so output does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += jobs) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// -------------------------------------------------------------------- loss

template <class T>
Tensor<T> training_loss(const Tensor<T>& pred, const Tensor<T>& label, double w_l1 = 1.0, double w_dice = 1.0) {
  if (pred.shape() != label.shape())
    throw ad::ShapeError("loss: prediction " + ad::shape_str(pred.shape()) + " vs label " + ad::shape_str(label.shape()));
  return ad::add(ad::scale(ad::l1_loss(pred, label), static_cast<T>(w_l1)),
                 ad::scale(ad::dice_loss(pred, label), static_cast<T>(w_dice)));
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  double lr0 = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  std::size_t epochs = 200;
  std::size_t batch_size = 1;
  std::uint64_t rng_seed = 1;
  double w_l1 = 1.0;
  double w_dice = 1.0;
  bool holdout = true;  // 80/20 split; off trains and selects on every sample
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (w_l1 < 0 || w_dice < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (!(lr0 > 0)) throw std::invalid_argument("lr0 must be positive");
    model.validate();
  }
};

inline constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
inline constexpr std::uint64_t kInitStream = 0x696e6974ULL;

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0, val_loss = kNaN, train_nmae = 0, val_nmae = kNaN, lr = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct TrainResult {
  PdnNet<T> model;  // carries the best-epoch parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::vector<std::string> train_ids, val_ids;
};

struct Split {
  std::vector<std::size_t> train, val;
};

inline Split split_samples(std::size_t n, std::uint64_t seed, bool holdout) {
  if (n == 0) throw std::invalid_argument("no samples");
  if (holdout && n < 2) throw std::invalid_argument("a train/val split needs at least 2 samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, kSplitStream));
  rng.shuffle(order);
  const std::size_t n_val = holdout ? std::max<std::size_t>(1, n / 5) : 0;
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

template <class T>
ModelInput<T> sample_input(const Sample& s, const ModelConfig& cfg) {
  return prepare_input<T>(s.graph, cfg, s.feature_scale);
}

template <class T>
Tensor<T> target_tensor(const Sample& s) {
  return Tensor<T>::constant({s.graph.n_h, s.graph.n_w}, std::vector<T>(s.target.begin(), s.target.end()));
}

template <class T>
std::vector<double> to_double(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

template <class T>
TrainResult<T> train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  for (const auto& s : samples)
    if (s.graph.n_channels() != cfg.model.c_in)
      throw DataError("sample " + s.id + " has " + std::to_string(s.graph.n_channels()) + " feature channels, model expects " +
                      std::to_string(cfg.model.c_in));
  const Split split = split_samples(samples.size(), cfg.rng_seed, cfg.holdout);
  TrainResult<T> res{PdnNet<T>(cfg.model, mix_seed(cfg.rng_seed, kInitStream)), {}, 0, {}, {}};
  for (auto i : split.train) res.train_ids.push_back(samples[i].id);
  for (auto i : split.val) res.val_ids.push_back(samples[i].id);

  std::vector<ModelInput<T>> inputs;
  std::vector<Tensor<T>> targets;
  for (const auto& s : samples) {
    inputs.push_back(sample_input<T>(s, cfg.model));
    targets.push_back(target_tensor<T>(s));
  }

  auto& model = res.model;
  ad::AdamConfig adam{cfg.lr0, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
  ad::AdamState<T> state;
  Rng rng(mix_seed(cfg.rng_seed, kSplitStream + 1));
  std::vector<std::size_t> order = split.train;
  const std::size_t per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.epochs * per_epoch;
  std::size_t step = 0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<ad::NamedArray> best_state = model.state();

  auto nan_mean = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : kNaN; };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0, nmae_sum = 0;
    std::size_t nmae_n = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      for (auto& p : model.parameters()) p.zero_grad();
      const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        const auto pred = model.forward(inputs[i]);
        const auto loss = training_loss(pred, targets[i], cfg.w_l1, cfg.w_dice);
        const double lv = loss.item();
        if (!std::isfinite(lv))
          throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                              ", sample " + samples[i].id + ")");
        ad::backward(loss);
        loss_sum += lv;
        const double e = nmae(to_double(pred), samples[i].target);
        if (!std::isnan(e)) nmae_sum += e, ++nmae_n;
      }
      if (hi - lo > 1) {
        const T inv = T(1) / static_cast<T>(hi - lo);
        for (auto& p : model.parameters())
          for (auto& g : p.mutable_grad()) g *= inv;
      }
      adam.lr = ad::cosine_lr(step, total, cfg.lr0);
      ad::adam_step(model.parameters(), state, adam);
      ++step;
    }
    rec.lr = ad::cosine_lr(step, total, cfg.lr0);  // schedule value after the epoch
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_nmae = nan_mean(nmae_sum, nmae_n);

    if (!split.val.empty()) {
      ad::NoGradGuard guard;
      double vl = 0, vn = 0;
      std::size_t vn_n = 0;
      for (auto i : split.val) {
        const auto pred = model.forward(inputs[i]);
        vl += training_loss(pred, targets[i], cfg.w_l1, cfg.w_dice).item();
        const double e = nmae(to_double(pred), samples[i].target);
        if (!std::isnan(e)) vn += e, ++vn_n;
      }
      rec.val_loss = vl / static_cast<double>(split.val.size());
      rec.val_nmae = nan_mean(vn, vn_n);
    }
    const double score = split.val.empty() ? rec.train_nmae : rec.val_nmae;
    if (score < best || res.best_epoch == 0) {
      best = score;
      res.best_epoch = epoch;
      best_state = model.state();
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.load_state(best_state);
  return res;
}

inline std::string format_history_csv(const std::vector<EpochRecord>& h) {
  std::string out = "epoch,train_loss,val_loss,train_nmae,val_nmae,lr\n";
  for (const auto& r : h)
    out += std::to_string(r.epoch) + "," + fmt_g9(r.train_loss) + "," + fmt_g9(r.val_loss) + "," + fmt_g9(r.train_nmae) +
           "," + fmt_g9(r.val_nmae) + "," + fmt_g9(r.lr) + "\n";
  return out;
}

// -------------------------------------------------------------- inference

// Prediction on the normalized [0, 1] label scale.
template <class T>
Map2D predict_normalized(const PdnNet<T>& model, const Sample& s) {
  ad::NoGradGuard guard;
  const auto pred = model.forward(sample_input<T>(s, model.config()));
  Map2D m(s.graph.n_h, s.graph.n_w);
  for (std::size_t k = 0; k < m.size(); ++k) m.values[k] = static_cast<double>(pred.values()[k]);
  return m;
}

// Back on the volt scale using the sample's stored label range.
inline Map2D to_volts(const Map2D& normalized, const Sample& s) {
  Map2D m = normalized;
  for (auto& v : m.values) v = s.label_lo + v * (s.label_hi - s.label_lo);
  return m;
}

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<MetricsReport> per_sample;
  MetricsSummary summary;
  double baseline_nmae = kNaN;  // each map predicted by its own mean
};

inline double mean_predictor_nmae(const Sample& s) {
  const double mu = std::accumulate(s.target.begin(), s.target.end(), 0.0) / static_cast<double>(s.target.size());
  return nmae(std::vector<double>(s.target.size(), mu), s.target);
}

inline EvalResult evaluate_predictions(const std::vector<Sample>& samples, const std::vector<Map2D>& preds) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalResult r;
  double base = 0;
  std::size_t base_n = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    r.ids.push_back(s.id);
    r.per_sample.push_back(compute_metrics(preds[k].values, s.target, s.graph.n_h, s.graph.n_w));
    const double b = mean_predictor_nmae(s);
    if (!std::isnan(b)) base += b, ++base_n;
  }
  r.summary = summarize(r.per_sample);
  r.baseline_nmae = base_n ? base / static_cast<double>(base_n) : kNaN;
  return r;
}

template <class T>
EvalResult evaluate(const PdnNet<T>& model, const std::vector<Sample>& samples, std::size_t jobs = 1) {
  std::vector<Map2D> preds(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t k) { preds[k] = predict_normalized(model, samples[k]); });
  return evaluate_predictions(samples, preds);
}

inline std::string format_metrics_csv(const EvalResult& r) {
  std::string out = "id";
  for (const char* n : kMetricNames) out += std::string(",") + n;
  out += '\n';
  auto row = [&](const std::string& id, const MetricsReport& m) {
    out += id;
    for (double v : m.as_array()) out += "," + fmt_g9(v);
    out += '\n';
  };
  for (std::size_t k = 0; k < r.ids.size(); ++k) row(r.ids[k], r.per_sample[k]);
  row("MEAN", r.summary.mean);
  return out;
}

// ---------------------------------------------------------------- ablation

inline const std::vector<std::string> kAblationVariants{"full_vd",    "full_ni",  "mixed",    "cnn_single",
                                                        "cnn_dual",   "gnn_single", "gnn_dual", "pdnnet"};

inline ModelConfig variant_config(const ModelConfig& base, const std::string& name) {
  ModelConfig c = base;
  const std::size_t blocks = base.n_vd_blocks + base.n_ni_blocks;
  using B = BranchKind;
  if (name == "pdnnet") {
  } else if (name == "full_vd") {
    c.n_vd_blocks = blocks;
    c.n_ni_blocks = 0;
  } else if (name == "full_ni") {
    c.n_vd_blocks = 0;
    c.n_ni_blocks = blocks;
  } else if (name == "mixed") {
    c.interleave_blocks = true;
  } else if (name == "cnn_single") {
    c.branches = {B::Cnn};
  } else if (name == "cnn_dual") {
    c.branches = {B::Cnn, B::Cnn};
  } else if (name == "gnn_single") {
    c.branches = {B::Gnn};
  } else if (name == "gnn_dual") {
    c.branches = {B::Gnn, B::Gnn};
  } else {
    throw std::invalid_argument("unknown ablation variant '" + name + "'");
  }
  return c;
}

inline constexpr std::size_t kAblationMetrics = 7;  // AUC is not part of the table

struct AblationRow {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> per_seed;  // test-set means
  std::array<double, kAblationMetrics> mean{}, stddev{};
};

inline void finalize_row(AblationRow& row) {
  const std::size_t n = row.per_seed.size();
  for (std::size_t k = 0; k < kAblationMetrics; ++k) {
    double s = 0;
    for (const auto& m : row.per_seed) s += m.as_array()[k];
    const double mu = s / static_cast<double>(n);
    double v = 0;
    for (const auto& m : row.per_seed) v += (m.as_array()[k] - mu) * (m.as_array()[k] - mu);
    row.mean[k] = mu;
    row.stddev[k] = n > 1 ? std::sqrt(v / static_cast<double>(n - 1)) : 0.0;
  }
}

template <class T>
std::vector<AblationRow> run_ablation(const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                                      const TrainConfig& base, const std::vector<std::string>& variants,
                                      const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1,
                                      const std::function<void(const std::string&)>& log = {}) {
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  for (const auto& v : variants) variant_config(base.model, v);
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    AblationRow row;
    row.variant = v;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model = variant_config(base.model, v);
      cfg.rng_seed = seed;
      const auto res = train<T>(train_set, cfg);
      const auto ev = evaluate(res.model, test_set, jobs);
      row.seeds.push_back(seed);
      row.per_seed.push_back(ev.summary.mean);
      if (log) log(v + " seed " + std::to_string(seed) + ": NMAE " + fmt_g9(ev.summary.mean.nmae));
    }
    finalize_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Cells are "mean±std" when more than one seed ran, plain means otherwise.
inline std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant";
  for (std::size_t k = 0; k < kAblationMetrics; ++k) out += std::string(",") + kMetricNames[k];
  out += '\n';
  for (const auto& r : rows) {
    out += r.variant;
    for (std::size_t k = 0; k < kAblationMetrics; ++k) {
      out += "," + fmt_g9(r.mean[k]);
      if (r.per_seed.size() > 1) out += "\xC2\xB1" + fmt_g9(r.stddev[k]);
    }
    out += '\n';
  }
  return out;
}

inline std::string format_ablation_raw_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,seed";
  for (std::size_t k = 0; k < kAblationMetrics; ++k) out += std::string(",") + kMetricNames[k];
  out += '\n';
  for (const auto& r : rows)
    for (std::size_t s = 0; s < r.per_seed.size(); ++s) {
      out += r.variant + "," + std::to_string(r.seeds[s]);
      const auto a = r.per_seed[s].as_array();
      for (std::size_t k = 0; k < kAblationMetrics; ++k) out += "," + fmt_g9(a[k]);
      out += '\n';
    }
  return out;
}

// The heterogeneous model should not lose to a single-branch variant on mean
// NMAE. Returns the violations (empty when the ordering holds or the rows
// needed for the comparison are absent).
inline std::vector<std::string> ablation_ordering_violations(const std::vector<AblationRow>& rows) {
  const AblationRow* full = nullptr;
  for (const auto& r : rows)
    if (r.variant == "pdnnet") full = &r;
  std::vector<std::string> out;
  if (!full) return out;
  for (const auto& r : rows)
    if ((r.variant == "cnn_single" || r.variant == "gnn_single") && full->mean[0] > r.mean[0])
      out.push_back("pdnnet NMAE " + fmt_g9(full->mean[0]) + " > " + r.variant + " NMAE " + fmt_g9(r.mean[0]));
  return out;
}

}  // namespace pdn
