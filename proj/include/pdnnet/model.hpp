#pragma once

// Dual-branch IR-drop predictor: a directed-graph GNN over the tile lattice
// and a 3D-encoder / 2D-decoder CNN over a rasterized feature canvas, fused
// per tile by a small MLP.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "autodiff/checkpoint.hpp"
#include "autodiff/ops.hpp"
#include "common.hpp"
#include "pdn_graph.hpp"
#include "rng.hpp"

namespace pdn {

using ad::Shape;
using ad::Tensor;

enum class BranchKind { Gnn, Cnn };
enum class BlockKind { VoltageDrop, NeighborInfluence };

struct ModelConfig {
  std::size_t c_in = 0;
  std::size_t d_hidden = 32;
  std::size_t n_vd_blocks = 2;
  std::size_t n_ni_blocks = 2;
  bool interleave_blocks = false;  // vd, ni, vd, ni, ... instead of all vd first
  std::size_t h_f = 32, w_f = 32;
  std::size_t cnn_levels = 3;
  std::vector<std::size_t> cnn_channels{8, 16, 32};
  std::size_t fusion_hidden = 16;
  std::vector<BranchKind> branches{BranchKind::Gnn, BranchKind::Cnn};

  std::vector<BlockKind> block_sequence() const {
    std::vector<BlockKind> seq;
    if (interleave_blocks) {
      std::size_t v = n_vd_blocks, n = n_ni_blocks;
      while (v || n) {
        if (v) seq.push_back(BlockKind::VoltageDrop), --v;
        if (n) seq.push_back(BlockKind::NeighborInfluence), --n;
      }
    } else {
      seq.assign(n_vd_blocks, BlockKind::VoltageDrop);
      seq.insert(seq.end(), n_ni_blocks, BlockKind::NeighborInfluence);
    }
    return seq;
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (c_in < 1 || d_hidden < 1 || fusion_hidden < 1) bad("widths must be >= 1");
    if (branches.empty()) bad("at least one branch");
    if (cnn_levels < 1) bad("cnn_levels must be >= 1");
    if (cnn_channels.size() != cnn_levels) bad("cnn_channels needs one width per level");
    for (auto c : cnn_channels)
      if (c < 1) bad("cnn channel widths must be >= 1");
    const std::size_t f = std::size_t{1} << cnn_levels;
    if (h_f == 0 || w_f == 0 || h_f % f || w_f % f) bad("h_f and w_f must be divisible by 2^cnn_levels");
  }
};

// --------------------------------------------------------------- parameters

template <class T>
struct Linear {
  Tensor<T> w, b;  // [in, out], [out]
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::bias_add(ad::matmul(x, w), b); }
};

template <class T>
struct Mlp2 {
  Linear<T> first, second;
  Tensor<T> operator()(const Tensor<T>& x) const { return second(ad::relu(first(x))); }
};

template <class T>
struct ConvUnit {
  Tensor<T> k, b;
};

template <class T>
struct CnnParams {
  std::vector<ConvUnit<T>> enc_a, enc_b;  // per level, 3x3x3 kernels
  std::vector<ConvUnit<T>> up;            // per level, 2x2 transposed
  std::vector<ConvUnit<T>> dec;           // per level, 3x3 after skip concat
  ConvUnit<T> head;                       // 1x1 to one channel
};

template <class T>
struct GnnParams {
  Mlp2<T> embed;
  std::vector<BlockKind> kinds;
  std::vector<Mlp2<T>> blocks;
  Mlp2<T> readout;
};

// Flat, ordered, named parameter collection.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> add(const std::string& name, Shape shape, double stddev) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(stddev == 0 ? 0.0 : rng_.normal() * stddev);
    auto t = Tensor<T>::parameter(std::move(shape), std::move(v));
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }
  Linear<T> linear(const std::string& name, std::size_t in, std::size_t out) {
    return {add(name + ".w", {in, out}, std::sqrt(2.0 / static_cast<double>(in))), add(name + ".b", {out}, 0)};
  }
  Mlp2<T> mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out) {
    auto a = linear(name + ".l1", in, hidden);
    auto b = linear(name + ".l2", hidden, out);
    return {a, b};
  }
  ConvUnit<T> conv(const std::string& name, Shape kshape) {
    std::size_t fan_in = 1;
    for (std::size_t a = 0; a + 1 < kshape.size(); ++a) fan_in *= kshape[a];
    const std::size_t cout = kshape.back();
    auto k = add(name + ".k", std::move(kshape), std::sqrt(2.0 / static_cast<double>(fan_in)));
    return {k, add(name + ".b", {cout}, 0)};
  }

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

 private:
  Rng rng_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

// ------------------------------------------------------------------- inputs

// Per-destination neighbour lists for the mean aggregation of the
// neighbour-influence block. Isolated nodes get one virtual zero neighbour.
struct NeighborIndex {
  std::vector<std::int64_t> dst, src;  // one entry per message
  std::vector<double> weight;          // 1 / in-degree of dst
  std::size_t n_nodes = 0;
};

inline NeighborIndex neighbor_index(const std::vector<Edge>& edges, std::size_t n_nodes) {
  auto sorted = edges;
  normalize_edges(sorted);
  if (!is_bidirected(sorted)) throw std::invalid_argument("neighbor influence needs a bidirected edge set");
  std::vector<std::vector<std::int64_t>> in(n_nodes);
  for (auto [s, t] : sorted) {
    if (s >= n_nodes || t >= n_nodes) throw std::invalid_argument("edge endpoint out of range");
    in[t].push_back(s);
  }
  NeighborIndex ix;
  ix.n_nodes = n_nodes;
  for (std::size_t v = 0; v < n_nodes; ++v) {
    if (in[v].empty()) in[v].push_back(-1);
    for (auto s : in[v]) {
      ix.dst.push_back(static_cast<std::int64_t>(v));
      ix.src.push_back(s);
      ix.weight.push_back(1.0 / static_cast<double>(in[v].size()));
    }
  }
  return ix;
}

template <class T>
struct ModelInput {
  std::size_t n_h = 0, n_w = 0, channels = 0;
  Tensor<T> features;  // [N, C]
  Tensor<T> canvas;    // [h_f, w_f, C, 1]
  std::vector<Edge> edges;
  NeighborIndex neighbors;
};

// Nearest-neighbour resampling of the node lattice onto an h_f x w_f canvas;
// feature channels become the temporal axis, with one data channel.
template <class T>
Tensor<T> rasterize_to_canvas(const std::vector<T>& features, std::size_t n_h, std::size_t n_w, std::size_t channels,
                              std::size_t h_f, std::size_t w_f) {
  if (n_h == 0 || n_w == 0) throw std::invalid_argument("rasterize: empty grid");
  if (features.size() != n_h * n_w * channels) throw ad::ShapeError("rasterize: feature count mismatch");
  std::vector<T> c(h_f * w_f * channels);
  for (std::size_t a = 0; a < h_f; ++a) {
    const std::size_t i = a * n_h / h_f;
    for (std::size_t b = 0; b < w_f; ++b) {
      const std::size_t j = b * n_w / w_f;
      std::copy_n(features.begin() + static_cast<std::ptrdiff_t>((i * n_w + j) * channels), channels,
                  c.begin() + static_cast<std::ptrdiff_t>((a * w_f + b) * channels));
    }
  }
  return Tensor<T>::constant({h_f, w_f, channels, 1}, std::move(c));
}

// feature_scale divides every feature value.
template <class T>
ModelInput<T> prepare_input(const PdnGraph& g, const ModelConfig& cfg, double feature_scale = 1.0) {
  if (g.n_channels() != cfg.c_in)
    throw ad::ShapeError("graph has " + std::to_string(g.n_channels()) + " channels, model expects " +
                         std::to_string(cfg.c_in));
  ModelInput<T> in;
  in.n_h = g.n_h;
  in.n_w = g.n_w;
  in.channels = g.n_channels();
  std::vector<T> f(g.features.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<T>(g.features[i] / feature_scale);
  in.canvas = rasterize_to_canvas(f, g.n_h, g.n_w, in.channels, cfg.h_f, cfg.w_f);
  in.features = Tensor<T>::constant({g.n_nodes(), in.channels}, std::move(f));
  in.edges = g.edges;
  in.neighbors = neighbor_index(to_bidirected(g).edges, g.n_nodes());
  return in;
}

// --------------------------------------------------------------- components

template <class T>
Tensor<T> gnn_embed(const Mlp2<T>& mlp, const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != mlp.first.w.dim(0))
    throw ad::ShapeError("gnn_embed: input " + ad::shape_str(x.shape()) + " does not match " +
                         std::to_string(mlp.first.w.dim(0)) + " channels");
  return mlp(x);
}

// m_v = sum of h over in-edges (src -> v); out = mlp(h || m).
template <class T>
Tensor<T> voltage_drop_block(const Mlp2<T>& mlp, const Tensor<T>& h, const std::vector<Edge>& edges) {
  auto m = ad::segment_sum<T>(h, edges);
  return mlp(ad::concat<T>({h, m}, 1));
}

// out_v = mean over neighbours k of mlp(h_v || h_k).
template <class T>
Tensor<T> neighbor_influence_block(const Mlp2<T>& mlp, const Tensor<T>& h, const NeighborIndex& ix) {
  if (ix.n_nodes != h.dim(0)) throw ad::ShapeError("neighbor_influence_block: index built for another graph");
  auto pairs = ad::concat<T>({ad::gather_rows(h, ix.dst), ad::gather_rows(h, ix.src)}, 1);
  auto msg = mlp(pairs);
  std::vector<std::uint32_t> dst(ix.dst.begin(), ix.dst.end());
  std::vector<T> w(ix.weight.begin(), ix.weight.end());
  return ad::scatter_add(msg, std::move(dst), ix.n_nodes, std::move(w));
}

template <class T>
Tensor<T> gnn_readout(const Mlp2<T>& mlp, const Tensor<T>& h) {
  return ad::tanh(mlp(h));
}

template <class T>
Tensor<T> gnn_forward(const GnnParams<T>& p, const ModelInput<T>& in) {
  auto h = gnn_embed(p.embed, in.features);
  for (std::size_t k = 0; k < p.blocks.size(); ++k)
    h = p.kinds[k] == BlockKind::VoltageDrop ? voltage_drop_block(p.blocks[k], h, in.edges)
                                             : neighbor_influence_block(p.blocks[k], h, in.neighbors);
  return gnn_readout(p.readout, h);  // [N, 1]
}

template <class T>
Tensor<T> conv3_block(const ConvUnit<T>& u, const Tensor<T>& x) {
  return ad::relu(ad::bias_add(ad::conv3d(x, u.k, {1, 1, 1}, {1, 1, 1}), u.b));
}

// canvas [h_f, w_f, T, 1] -> [h_f, w_f, 1]
template <class T>
Tensor<T> cnn_forward(const CnnParams<T>& p, const Tensor<T>& canvas) {
  const std::size_t levels = p.enc_a.size();
  if (canvas.rank() != 4 || canvas.dim(3) != 1) throw ad::ShapeError("cnn_forward: canvas must be [H, W, T, 1]");
  const std::size_t f = std::size_t{1} << levels;
  if (canvas.dim(0) % f || canvas.dim(1) % f)
    throw ad::ShapeError("cnn_forward: spatial size " + ad::shape_str(canvas.shape()) + " not divisible by " +
                         std::to_string(f));
  Tensor<T> x = canvas;
  std::vector<Tensor<T>> skips;
  for (std::size_t l = 0; l < levels; ++l) {
    x = conv3_block(p.enc_a[l], x);
    x = conv3_block(p.enc_b[l], x);
    skips.push_back(ad::mean_over_axis(x, 2));
    x = ad::downsample2(x, {true, true, x.dim(2) > 1});
  }
  Tensor<T> y = ad::mean_over_axis(x, 2);
  for (std::size_t l = levels; l-- > 0;) {
    y = ad::relu(ad::bias_add(ad::transposed_conv2d(y, p.up[l].k, 2, 0), p.up[l].b));
    y = ad::concat<T>({y, skips[l]}, 2);
    y = ad::relu(ad::bias_add(ad::conv2d(y, p.dec[l].k, 1, 1), p.dec[l].b));
  }
  return ad::bias_add(ad::conv2d(y, p.head.k, 1, 0), p.head.b);
}

// Per-tile fusion of branch outputs: every branch output is brought to
// [N, 1], concatenated and passed through the fusion MLP; result [n_h, n_w].
template <class T>
Tensor<T> fuse(const Mlp2<T>& mlp, const std::vector<Tensor<T>>& node_outputs, std::size_t n_h, std::size_t n_w) {
  auto z = mlp(ad::concat<T>(node_outputs, 1));
  return ad::reshape(z, {n_h, n_w});
}

template <class T>
Tensor<T> cnn_to_nodes(const Tensor<T>& y_cnn, std::size_t n_h, std::size_t n_w) {
  return ad::reshape(ad::resample2d_bilinear(y_cnn, n_h, n_w), {n_h * n_w, 1});
}

// -------------------------------------------------------------------- model

template <class T>
class PdnNet {
 public:
  PdnNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
    cfg_.validate();
    std::size_t gi = 0, ci = 0;
    for (auto kind : cfg_.branches) {
      if (kind == BranchKind::Gnn) {
        gnn_.push_back(make_gnn("gnn" + std::to_string(gi++)));
      } else {
        cnn_.push_back(make_cnn("cnn" + std::to_string(ci++)));
      }
    }
    const std::size_t nb = cfg_.branches.size();
    fusion_ = store_.mlp("fusion", nb, cfg_.fusion_hidden, 1);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& parameters() { return store_.tensors(); }
  const std::vector<Tensor<T>>& parameters() const { return store_.tensors(); }
  const std::vector<std::string>& parameter_names() const { return store_.names(); }
  std::size_t parameter_count() const { return store_.count(); }
  const std::vector<GnnParams<T>>& gnn_params() const { return gnn_; }
  const std::vector<CnnParams<T>>& cnn_params() const { return cnn_; }
  Mlp2<T>& fusion() { return fusion_; }

  // Prediction map [n_h, n_w].
  Tensor<T> forward(const ModelInput<T>& in) const {
    std::vector<Tensor<T>> outs;
    std::size_t gi = 0, ci = 0;
    for (auto kind : cfg_.branches) {
      if (kind == BranchKind::Gnn)
        outs.push_back(gnn_forward(gnn_[gi++], in));
      else
        outs.push_back(cnn_to_nodes(cnn_forward(cnn_[ci++], in.canvas), in.n_h, in.n_w));
    }
    return fuse(fusion_, outs, in.n_h, in.n_w);
  }

  std::vector<ad::NamedArray> state() const {
    std::vector<ad::NamedArray> out;
    for (std::size_t k = 0; k < store_.tensors().size(); ++k) {
      const auto& t = store_.tensors()[k];
      out.push_back({store_.names()[k], t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
    }
    return out;
  }

  void load_state(const std::vector<ad::NamedArray>& arrays) {
    std::map<std::string, const ad::NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (std::size_t k = 0; k < store_.tensors().size(); ++k) {
      const auto& name = store_.names()[k];
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint lacks parameter " + name);
      auto& t = store_.tensors()[k];
      if (it->second->shape != t.shape())
        throw DataError("checkpoint shape for " + name + " is " + ad::shape_str(it->second->shape) + ", expected " +
                        ad::shape_str(t.shape()));
      auto v = t.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(it->second->values[i]);
    }
    if (arrays.size() != store_.tensors().size()) throw DataError("checkpoint has extra parameters");
  }

 private:
  GnnParams<T> make_gnn(const std::string& p) {
    const std::size_t d = cfg_.d_hidden;
    GnnParams<T> g;
    g.embed = store_.mlp(p + ".embed", cfg_.c_in, d, d);
    g.kinds = cfg_.block_sequence();
    for (std::size_t k = 0; k < g.kinds.size(); ++k) {
      const std::string tag = g.kinds[k] == BlockKind::VoltageDrop ? ".vd" : ".ni";
      g.blocks.push_back(store_.mlp(p + tag + std::to_string(k), 2 * d, d, d));
      if (g.kinds[k] == BlockKind::VoltageDrop) damp_sum_block(g.blocks.back(), d);
    }
    g.readout = store_.mlp(p + ".readout", d, d, 1);
    return g;
  }

  // Damped init for sum blocks: message rows / 4 (lattice in-degree), output / sqrt 2.
  static void damp_sum_block(Mlp2<T>& mlp, std::size_t d) {
    auto w = mlp.first.w.mutable_values();  // [2d, d], rows d..2d see the message
    for (std::size_t i = d * d; i < w.size(); ++i) w[i] *= T(0.25);
    for (auto& v : mlp.second.w.mutable_values()) v *= T(0.7071067811865476);
  }

  CnnParams<T> make_cnn(const std::string& p) {
    CnnParams<T> c;
    const auto& ch = cfg_.cnn_channels;
    const std::size_t L = cfg_.cnn_levels;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t cin = l == 0 ? 1 : ch[l - 1];
      const std::string s = std::to_string(l);
      c.enc_a.push_back(store_.conv(p + ".enc" + s + "a", {3, 3, 3, cin, ch[l]}));
      c.enc_b.push_back(store_.conv(p + ".enc" + s + "b", {3, 3, 3, ch[l], ch[l]}));
    }
    c.up.resize(L);
    c.dec.resize(L);
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t cin = l + 1 == L ? ch[L - 1] : ch[l + 1];
      const std::string s = std::to_string(l);
      c.up[l] = store_.conv(p + ".up" + s, {2, 2, cin, ch[l]});
      c.dec[l] = store_.conv(p + ".dec" + s, {3, 3, 2 * ch[l], ch[l]});
    }
    c.head = store_.conv(p + ".head", {1, 1, ch[0], 1});
    return c;
  }

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::vector<GnnParams<T>> gnn_;
  std::vector<CnnParams<T>> cnn_;
  Mlp2<T> fusion_;
};

}  // namespace pdn
