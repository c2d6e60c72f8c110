#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "pdnnet/autodiff/grad_check.hpp"
#include "pdnnet/training.hpp"

using namespace pdn;
using Catch::Approx;

namespace {

ModelConfig tiny_config(std::size_t c_in) {
  ModelConfig c;
  c.c_in = c_in;
  c.d_hidden = 8;
  c.n_vd_blocks = 1;
  c.n_ni_blocks = 1;
  c.h_f = c.w_f = 8;
  c.cnn_levels = 3;
  c.cnn_channels = {2, 4, 4};
  c.fusion_hidden = 6;
  return c;
}

Sample tiny_sample(std::size_t n, std::uint64_t seed, const std::string& id = "a") {
  GenSpec spec;
  spec.width_um = spec.height_um = static_cast<double>(n);
  spec.n_cells = 4 * n * n;
  spec.strip_pitch_um = 3.0;
  spec.t_sim = 2;
  spec.rng_seed = seed;
  return sample_from_layout(id, generate_synthetic(spec));
}

std::vector<Sample> tiny_set(std::size_t count, std::size_t n = 4) {
  std::vector<Sample> v;
  for (std::size_t k = 0; k < count; ++k) v.push_back(tiny_sample(n, 100 + k, "t" + std::to_string(k)));
  return v;
}

}  // namespace

TEST_CASE("sample normalization") {
  const auto s = tiny_sample(4, 3);
  CHECK(s.label.rows == 4);
  CHECK(s.label.cols == 4);
  CHECK(*std::min_element(s.target.begin(), s.target.end()) == 0.0);
  CHECK(*std::max_element(s.target.begin(), s.target.end()) == 1.0);
  const auto back = to_volts(Map2D{4, 4, 0.0}, s);
  CHECK(back.values[0] == s.label_lo);
  CHECK_THROWS_AS(make_sample("x", s.graph, Map2D(3, 4)), DataError);
}

TEST_CASE("loss examples") {
  std::vector<double> lab(16);
  for (std::size_t k = 0; k < lab.size(); ++k) lab[k] = double(k) / 15.0;
  const auto label = Tensor<double>::constant({4, 4}, lab);
  const auto same = training_loss(Tensor<double>::constant({4, 4}, lab), label);
  CHECK(same.item() == Approx(0).margin(1e-6));

  std::vector<double> shifted = lab;
  for (auto& v : shifted) v += 0.1;
  const auto l1_only = training_loss(Tensor<double>::constant({4, 4}, shifted), label, 1.0, 0.0);
  CHECK(l1_only.item() == Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(training_loss(Tensor<double>::constant({2, 8}, lab), label), ad::ShapeError);
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(4);
  std::vector<double> p(25), t(25);
  for (auto& v : p) v = rng.uniform();
  for (auto& v : t) v = rng.uniform();
  auto pred = Tensor<double>::parameter({5, 5}, p);
  const auto label = Tensor<double>::constant({5, 5}, t);
  const auto r = ad::grad_check<double>([&] { return training_loss(pred, label, 1.0, 1.0); }, {pred}, 1e-6, 25);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("split is disjoint and covers all samples") {
  for (std::size_t n : {2u, 5u, 10u, 64u}) {
    const auto s = split_samples(n, 9, true);
    CHECK(s.val.size() == std::max<std::size_t>(1, n / 5));
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (auto v : s.val) CHECK(all.insert(v).second);
    CHECK(all.size() == n);
  }
  CHECK(split_samples(3, 1, false).val.empty());
  CHECK_THROWS_AS(split_samples(1, 1, true), std::invalid_argument);
}

TEST_CASE("training is deterministic and the schedule ends at zero") {
  const auto data = tiny_set(5);
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 3;
  cfg.batch_size = 2;
  const auto a = train<double>(data, cfg);
  const auto b = train<double>(data, cfg);
  REQUIRE(a.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.history[e].epoch == e + 1);
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_nmae == b.history[e].val_nmae);
  }
  CHECK(a.history.back().lr == Approx(0).margin(1e-15));
  CHECK(a.val_ids == b.val_ids);
  CHECK(a.model.state()[0].values == b.model.state()[0].values);

  cfg.rng_seed = 2;
  const auto c = train<double>(data, cfg);
  CHECK(c.history[0].train_loss != a.history[0].train_loss);
}

TEST_CASE("best checkpoint is the best validation epoch") {
  const auto data = tiny_set(5);
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 6;
  cfg.lr0 = 5e-3;
  const auto r = train<double>(data, cfg);
  std::size_t best = 1;
  for (const auto& h : r.history)
    if (h.val_nmae < r.history[best - 1].val_nmae) best = h.epoch;
  CHECK(r.best_epoch == best);

  std::vector<Sample> val;
  for (const auto& s : data)
    if (std::find(r.val_ids.begin(), r.val_ids.end(), s.id) != r.val_ids.end()) val.push_back(s);
  const auto ev = evaluate(r.model, val);
  CHECK(ev.summary.mean.nmae == Approx(r.history[best - 1].val_nmae).epsilon(1e-12));
}

TEST_CASE("first epoch lowers the training loss") {
  const auto data = tiny_set(8);
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 1;
  cfg.lr0 = 3e-3;
  cfg.holdout = false;
  auto before = train<double>(data, TrainConfig{cfg});  // reused for its initial model only
  PdnNet<double> init(cfg.model, mix_seed(cfg.rng_seed, kInitStream));
  auto loss_of = [&](const PdnNet<double>& m) {
    ad::NoGradGuard g;
    double s = 0;
    for (const auto& d : data)
      s += training_loss(m.forward(sample_input<double>(d, cfg.model)), target_tensor<double>(d)).item();
    return s;
  };
  CHECK(loss_of(before.model) < loss_of(init));
}

TEST_CASE("non-finite loss aborts with the step") {
  auto data = tiny_set(3);
  data[1].target[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 2;
  cfg.holdout = false;
  CHECK_THROWS_WITH(train<double>(data, cfg), Catch::Matchers::ContainsSubstring("at step"));
}

TEST_CASE("train rejects bad configurations") {
  const auto data = tiny_set(2);
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 0;
  CHECK_THROWS_AS(train<double>(data, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.w_dice = -1;
  CHECK_THROWS_AS(train<double>(data, cfg), std::invalid_argument);
  cfg.w_dice = 1;
  cfg.model.c_in += 1;
  CHECK_THROWS_AS(train<double>(data, cfg), DataError);
  cfg.model.c_in -= 1;
  CHECK_THROWS_AS(train<double>({data[0]}, cfg), std::invalid_argument);
}

TEST_CASE("single sample overfit", "[slow]") {
  const std::vector<Sample> data{tiny_sample(8, 21)};
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 500;
  cfg.lr0 = 1e-2;
  cfg.weight_decay = 0;
  cfg.holdout = false;
  const auto r = train<float>(data, cfg);
  const auto ev = evaluate(r.model, data);
  INFO("final train NMAE " << r.history.back().train_nmae);
  CHECK(ev.summary.mean.nmae < 0.05);
}

TEST_CASE("evaluate with injected predictions") {
  const auto data = tiny_set(2);
  std::vector<Map2D> perfect;
  for (const auto& s : data) perfect.push_back(Map2D{s.graph.n_h, s.graph.n_w, 0.0});
  for (std::size_t k = 0; k < data.size(); ++k) perfect[k].values = data[k].target;
  const auto ev = evaluate_predictions(data, perfect);
  CHECK(ev.summary.mean.nmae == 0.0);
  CHECK(ev.summary.mean.ssim == Approx(1.0).margin(1e-12));
  CHECK(ev.summary.mean.pearson == Approx(1.0).margin(1e-12));
  CHECK(ev.summary.mean.spearman == Approx(1.0).margin(1e-12));
  CHECK(ev.summary.mean.kendall == Approx(1.0).margin(1e-12));
  CHECK(ev.baseline_nmae > 0);

  // constant prediction: correlations undefined and excluded from the means
  std::vector<Map2D> flat;
  for (const auto& s : data) flat.push_back(Map2D{s.graph.n_h, s.graph.n_w, 0.5});
  const auto fe = evaluate_predictions(data, flat);
  CHECK(std::isnan(fe.summary.mean.pearson));
  CHECK(fe.summary.excluded[4] == 2);

  // hand average of two samples
  Rng rng(8);
  std::vector<Map2D> noisy = perfect;
  for (auto& m : noisy)
    for (auto& v : m.values) v += 0.1 * rng.normal();
  const auto ne = evaluate_predictions(data, noisy);
  for (std::size_t k = 0; k < 8; ++k) {
    const double a = compute_metrics(noisy[0].values, data[0].target, 4, 4).as_array()[k];
    const double b = compute_metrics(noisy[1].values, data[1].target, 4, 4).as_array()[k];
    CHECK(ne.summary.mean.as_array()[k] == Approx((a + b) / 2).epsilon(1e-14));
  }
  CHECK(format_metrics_csv(ne).starts_with("id,NMAE,R2,PSNR,SSIM,Pear,Spea,Kend,AUC\nt0,"));
}

TEST_CASE("dataset directory round trip") {
  const auto root = std::filesystem::temp_directory_path() / "pdnnet_ds_test";
  std::filesystem::remove_all(root);
  const auto data = tiny_set(3);
  for (const auto& s : data) save_sample(root, s);
  const auto back = load_dataset(root);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back[k].id == data[k].id);
    CHECK(back[k].graph.edges == data[k].graph.edges);
    for (std::size_t i = 0; i < data[k].target.size(); ++i) CHECK(back[k].target[i] == Approx(data[k].target[i]).margin(1e-7));
  }
  CHECK_THROWS_AS(load_dataset(root / "missing"), DataError);
}

TEST_CASE("benchmark generator") {
  BenchmarkSpec spec;
  spec.n_samples = 6;
  spec.n_cells = 40;
  const auto a = generate_benchmark(spec);
  const auto b = generate_benchmark(spec);
  REQUIRE(a.size() == 6);
  CHECK(a[0].id == "s000");
  for (std::size_t k = 0; k < 6; ++k) CHECK(a[k].layout == b[k].layout);
  CHECK(a[0].layout.pdn.vstrip_x_um == regular_strips(16, 3));
  CHECK(a[2].layout.pdn.vstrip_x_um == regular_strips(16, 5));
  for (std::size_t k = 1; k < 6; k += 2) {
    const auto& xs = a[k].layout.pdn.vstrip_x_um;
    CHECK(xs.size() >= 2);
    for (std::size_t i = 1; i < xs.size(); ++i) CHECK(xs[i] - xs[i - 1] >= 1.0);
  }
}

TEST_CASE("ablation variants and table") {
  ModelConfig base = tiny_config(5);
  CHECK(variant_config(base, "full_vd").n_vd_blocks == 2);
  CHECK(variant_config(base, "full_vd").n_ni_blocks == 0);
  CHECK(variant_config(base, "full_ni").n_ni_blocks == 2);
  CHECK(variant_config(base, "mixed").interleave_blocks);
  CHECK(variant_config(base, "gnn_dual").branches == std::vector<BranchKind>{BranchKind::Gnn, BranchKind::Gnn});
  CHECK_THROWS_AS(variant_config(base, "bogus"), std::invalid_argument);

  const auto data = tiny_set(3);
  TrainConfig cfg;
  cfg.model = tiny_config(data[0].graph.n_channels());
  cfg.epochs = 1;
  const auto rows = run_ablation<double>(data, data, cfg, {"pdnnet"}, {1, 2, 3});
  REQUIRE(rows.size() == 1);
  const auto csv = format_ablation_csv(rows);
  CHECK(csv.starts_with("variant,NMAE,R2,PSNR,SSIM,Pear,Spea,Kend\npdnnet,"));
  CHECK(csv.find("\xC2\xB1") != std::string::npos);
  for (std::size_t k = 0; k < kAblationMetrics; ++k) {
    double s = 0, s2 = 0;
    for (const auto& m : rows[0].per_seed) s += m.as_array()[k];
    const double mu = s / 3;
    for (const auto& m : rows[0].per_seed) s2 += (m.as_array()[k] - mu) * (m.as_array()[k] - mu);
    CHECK(rows[0].mean[k] == Approx(mu).epsilon(1e-14));
    CHECK(rows[0].stddev[k] == Approx(std::sqrt(s2 / 2)).epsilon(1e-12).margin(1e-15));
    CHECK(std::isfinite(rows[0].mean[k]));
  }
  CHECK(format_ablation_raw_csv(rows).find("pdnnet,3,") != std::string::npos);

  AblationRow full{"pdnnet", {}, {}, {}, {}}, single{"cnn_single", {}, {}, {}, {}};
  full.mean[0] = 0.2;
  single.mean[0] = 0.1;
  CHECK(ablation_ordering_violations({full, single}).size() == 1);
  full.mean[0] = 0.05;
  CHECK(ablation_ordering_violations({full, single}).empty());
}

TEST_CASE("parallel evaluation matches serial") {
  const auto data = tiny_set(4);
  PdnNet<double> m(tiny_config(data[0].graph.n_channels()), 3);
  const auto a = evaluate(m, data, 1);
  const auto b = evaluate(m, data, 3);
  for (std::size_t k = 0; k < 4; ++k) CHECK(a.per_sample[k].as_array() == b.per_sample[k].as_array());
}
