#pragma once

// Differentiable primitives. Layout conventions (row-major, channels last):
//   node matrices   [N, d]
//   2D feature maps [H, W, C], kernels [kh, kw, Cin, Cout]
//   3D volumes      [H, W, T, C], kernels [kh, kw, kt, Cin, Cout]

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace pdn::ad {

namespace detail {

template <class T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <class T>
const T* parent_value(Node<T>& self, std::size_t i) {
  return self.parents[i]->value.data();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (T* g = detail::parent_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const T* av = detail::parent_value(self, 0);
    const T* bv = detail::parent_value(self, 1);
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= c;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [c](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    const T* x = detail::parent_value(self, 0);
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (x[i] > T(0)) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  return Tensor<T>::from_op({}, {s}, {a}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return Tensor<T>::from_op(std::move(shape), a.data(), {a}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ------------------------------------------------------------------- dense

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* A = a.values().data();
  const T* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return Tensor<T>::from_op({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* A = detail::parent_value(self, 0);
    const T* B = detail::parent_value(self, 1);
    const T* G = self.grad.data();
    if (T* gA = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T s = T(0);
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          gA[i * k + p] += s;
        }
    if (T* gB = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          if (av == T(0)) continue;
          for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += av * G[i * n + j];
        }
  });
}

// Adds b[n] along the last axis.
template <class T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require(x.rank() >= 1 && b.rank() == 1 && x.shape().back() == b.dim(0),
                  "bias_add: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::size_t n = b.dim(0);
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i % n];
  return Tensor<T>::from_op(x.shape(), std::move(out), {x, b}, [n](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat: no inputs");
  const Shape& s0 = xs[0].shape();
  detail::require(axis < s0.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t a = 0; a < axis; ++a) outer *= s0[a];
  for (std::size_t a = axis + 1; a < s0.size(); ++a) inner *= s0[a];
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    Shape s = x.shape();
    detail::require(s.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a)
      detail::require(a == axis || s[a] == s0[a], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape shape = s0;
  shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<T> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* src = xs[k].values().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  return Tensor<T>::from_op(std::move(shape), std::move(out), xs, [widths, outer, row](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (T* g = detail::parent_grad(self, k))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < widths[k]; ++i) g[o * widths[k] + i] += self.grad[o * row + offset + i];
      offset += widths[k];
    }
  });
}

// ------------------------------------------------------------------- graph

// Rows of x selected by index; a negative index yields a zero row.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> index) {
  detail::require(x.rank() == 2, "gather_rows: expects [N, d]");
  const std::size_t N = x.dim(0), d = x.dim(1), E = index.size();
  std::vector<T> out(E * d, T(0));
  for (std::size_t e = 0; e < E; ++e) {
    if (index[e] < 0) continue;
    detail::require(static_cast<std::size_t>(index[e]) < N, "gather_rows: index out of range");
    std::copy_n(x.values().data() + index[e] * d, d, out.data() + e * d);
  }
  return Tensor<T>::from_op({E, d}, std::move(out), {x}, [index = std::move(index), d](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t e = 0; e < index.size(); ++e) {
        if (index[e] < 0) continue;
        for (std::size_t c = 0; c < d; ++c) g[index[e] * d + c] += self.grad[e * d + c];
      }
  });
}

// out[index[e]] += weight[e] * m[e]; weights default to 1.
template <class T>
Tensor<T> scatter_add(const Tensor<T>& m, std::vector<std::uint32_t> index, std::size_t n_out,
                      std::vector<T> weights = {}) {
  detail::require(m.rank() == 2 && m.dim(0) == index.size(), "scatter_add: index count must match rows");
  detail::require(weights.empty() || weights.size() == index.size(), "scatter_add: weight count mismatch");
  const std::size_t d = m.dim(1);
  std::vector<T> out(n_out * d, T(0));
  for (std::size_t e = 0; e < index.size(); ++e) {
    detail::require(index[e] < n_out, "scatter_add: index out of range");
    const T w = weights.empty() ? T(1) : weights[e];
    for (std::size_t c = 0; c < d; ++c) out[index[e] * d + c] += w * m.values()[e * d + c];
  }
  return Tensor<T>::from_op({n_out, d}, std::move(out), {m},
                            [index = std::move(index), weights = std::move(weights), d](Node<T>& self) {
                              if (T* g = detail::parent_grad(self, 0))
                                for (std::size_t e = 0; e < index.size(); ++e) {
                                  const T w = weights.empty() ? T(1) : weights[e];
                                  for (std::size_t c = 0; c < d; ++c) g[e * d + c] += w * self.grad[index[e] * d + c];
                                }
                            });
}

// Sum of source rows per destination: out[dst] = sum over edges (src -> dst) of h[src].
template <class T>
Tensor<T> segment_sum(const Tensor<T>& h, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  detail::require(h.rank() == 2, "segment_sum: expects [N, d]");
  const std::size_t N = h.dim(0), d = h.dim(1);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> E(edges.begin(), edges.end());
  std::vector<T> out(N * d, T(0));
  const T* x = h.values().data();
  for (auto [s, t] : E) {
    detail::require(s < N && t < N, "segment_sum: edge endpoint out of range");
    for (std::size_t c = 0; c < d; ++c) out[t * d + c] += x[s * d + c];
  }
  return Tensor<T>::from_op({N, d}, std::move(out), {h}, [E = std::move(E), d](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (auto [s, t] : E)
        for (std::size_t c = 0; c < d; ++c) g[s * d + c] += self.grad[t * d + c];
  });
}

// ------------------------------------------------------------- convolution

struct ConvGeometry {
  std::array<std::size_t, 3> in{};      // spatial extents
  std::array<std::size_t, 3> kernel{};  // kernel extents
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  std::size_t cin = 0, cout = 0;

  std::size_t out(std::size_t a) const {
    const std::size_t padded = in[a] + 2 * pad[a];
    detail::require(padded >= kernel[a], "conv: kernel larger than padded input");
    return (padded - kernel[a]) / stride[a] + 1;
  }
};

// floor((in + 2p - k)/s) + 1
inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  return (in + 2 * p - k) / s + 1;
}
// (in - 1)s - 2p + k
inline std::size_t transposed_conv_out_size(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  return (in - 1) * s + k - 2 * p;
}

namespace detail {

// Visits every (output position, kernel tap, input position) triple with the
// input position inside bounds. Positions are flat spatial indices.
template <class F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  const std::size_t o0 = g.out(0), o1 = g.out(1), o2 = g.out(2);
  for (std::size_t a = 0; a < o0; ++a)
    for (std::size_t b = 0; b < o1; ++b)
      for (std::size_t c = 0; c < o2; ++c) {
        const std::size_t opos = (a * o1 + b) * o2 + c;
        for (std::size_t ka = 0; ka < g.kernel[0]; ++ka) {
          const auto ia = static_cast<std::ptrdiff_t>(a * g.stride[0] + ka) - static_cast<std::ptrdiff_t>(g.pad[0]);
          if (ia < 0 || ia >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
          for (std::size_t kb = 0; kb < g.kernel[1]; ++kb) {
            const auto ib = static_cast<std::ptrdiff_t>(b * g.stride[1] + kb) - static_cast<std::ptrdiff_t>(g.pad[1]);
            if (ib < 0 || ib >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
            for (std::size_t kc = 0; kc < g.kernel[2]; ++kc) {
              const auto ic = static_cast<std::ptrdiff_t>(c * g.stride[2] + kc) - static_cast<std::ptrdiff_t>(g.pad[2]);
              if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
              const std::size_t ipos = (static_cast<std::size_t>(ia) * g.in[1] + static_cast<std::size_t>(ib)) * g.in[2] +
                                       static_cast<std::size_t>(ic);
              const std::size_t kpos = (ka * g.kernel[1] + kb) * g.kernel[2] + kc;
              f(opos, kpos, ipos);
            }
          }
        }
      }
}

template <class T>
Tensor<T> conv_nd(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& g, Shape out_shape) {
  const std::size_t ci = g.cin, co = g.cout;
  std::vector<T> out(numel(out_shape), T(0));
  const T* X = x.values().data();
  const T* K = k.values().data();
  for_each_tap(g, [&](std::size_t opos, std::size_t kpos, std::size_t ipos) {
    T* o = out.data() + opos * co;
    const T* xi = X + ipos * ci;
    const T* kk = K + kpos * ci * co;
    for (std::size_t a = 0; a < ci; ++a) {
      const T xv = xi[a];
      if (xv == T(0)) continue;
      const T* krow = kk + a * co;
      for (std::size_t b = 0; b < co; ++b) o[b] += xv * krow[b];
    }
  });
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x, k}, [g](Node<T>& self) {
    const std::size_t ci = g.cin, co = g.cout;
    const T* X = parent_value(self, 0);
    const T* K = parent_value(self, 1);
    T* gX = parent_grad(self, 0);
    T* gK = parent_grad(self, 1);
    const T* G = self.grad.data();
    for_each_tap(g, [&](std::size_t opos, std::size_t kpos, std::size_t ipos) {
      const T* go = G + opos * co;
      const T* kk = K + kpos * ci * co;
      const T* xi = X + ipos * ci;
      for (std::size_t a = 0; a < ci; ++a) {
        const T* krow = kk + a * co;
        if (gX) {
          T s = T(0);
          for (std::size_t b = 0; b < co; ++b) s += krow[b] * go[b];
          gX[ipos * ci + a] += s;
        }
        if (gK && xi[a] != T(0)) {
          T* gk = gK + (kpos * ci + a) * co;
          for (std::size_t b = 0; b < co; ++b) gk[b] += xi[a] * go[b];
        }
      }
    });
  });
}

}  // namespace detail

// x [H, W, T, Cin], kernel [kh, kw, kt, Cin, Cout].
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernel, std::array<std::size_t, 3> stride = {1, 1, 1},
                 std::array<std::size_t, 3> pad = {0, 0, 0}) {
  detail::require(x.rank() == 4 && kernel.rank() == 5 && kernel.dim(3) == x.dim(3),
                  "conv3d: " + shape_str(x.shape()) + " * " + shape_str(kernel.shape()));
  ConvGeometry g;
  g.in = {x.dim(0), x.dim(1), x.dim(2)};
  g.kernel = {kernel.dim(0), kernel.dim(1), kernel.dim(2)};
  g.stride = stride;
  g.pad = pad;
  g.cin = x.dim(3);
  g.cout = kernel.dim(4);
  return detail::conv_nd(x, kernel, g, {g.out(0), g.out(1), g.out(2), g.cout});
}

// x [H, W, Cin], kernel [kh, kw, Cin, Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t pad = 0) {
  detail::require(x.rank() == 3 && kernel.rank() == 4 && kernel.dim(2) == x.dim(2),
                  "conv2d: " + shape_str(x.shape()) + " * " + shape_str(kernel.shape()));
  ConvGeometry g;
  g.in = {x.dim(0), x.dim(1), 1};
  g.kernel = {kernel.dim(0), kernel.dim(1), 1};
  g.stride = {stride, stride, 1};
  g.pad = {pad, pad, 0};
  g.cin = x.dim(2);
  g.cout = kernel.dim(3);
  return detail::conv_nd(x, kernel, g, {g.out(0), g.out(1), g.cout});
}

// Adjoint of conv2d in x. x [H, W, Cin], kernel [kh, kw, Cin, Cout];
// output spatial size (in - 1)s - 2p + k.
template <class T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride = 2, std::size_t pad = 0) {
  detail::require(x.rank() == 3 && kernel.rank() == 4 && kernel.dim(2) == x.dim(2),
                  "transposed_conv2d: " + shape_str(x.shape()) + " * " + shape_str(kernel.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1), ci = x.dim(2), kh = kernel.dim(0), kw = kernel.dim(1),
                    co = kernel.dim(3);
  detail::require((H - 1) * stride + kh > 2 * pad && (W - 1) * stride + kw > 2 * pad,
                  "transposed_conv2d: padding consumes the output");
  const std::size_t Ho = transposed_conv_out_size(H, kh, stride, pad);
  const std::size_t Wo = transposed_conv_out_size(W, kw, stride, pad);
  auto visit = [=](auto&& f) {
    for (std::size_t ih = 0; ih < H; ++ih)
      for (std::size_t iw = 0; iw < W; ++iw)
        for (std::size_t dh = 0; dh < kh; ++dh) {
          const auto oh = static_cast<std::ptrdiff_t>(ih * stride + dh) - static_cast<std::ptrdiff_t>(pad);
          if (oh < 0 || oh >= static_cast<std::ptrdiff_t>(Ho)) continue;
          for (std::size_t dw = 0; dw < kw; ++dw) {
            const auto ow = static_cast<std::ptrdiff_t>(iw * stride + dw) - static_cast<std::ptrdiff_t>(pad);
            if (ow < 0 || ow >= static_cast<std::ptrdiff_t>(Wo)) continue;
            f(ih * W + iw, dh * kw + dw, static_cast<std::size_t>(oh) * Wo + static_cast<std::size_t>(ow));
          }
        }
  };
  std::vector<T> out(Ho * Wo * co, T(0));
  const T* X = x.values().data();
  const T* K = kernel.values().data();
  visit([&](std::size_t ipos, std::size_t kpos, std::size_t opos) {
    for (std::size_t a = 0; a < ci; ++a) {
      const T xv = X[ipos * ci + a];
      const T* krow = K + (kpos * ci + a) * co;
      T* o = out.data() + opos * co;
      for (std::size_t b = 0; b < co; ++b) o[b] += xv * krow[b];
    }
  });
  return Tensor<T>::from_op({Ho, Wo, co}, std::move(out), {x, kernel}, [visit, ci, co](Node<T>& self) {
    const T* X = detail::parent_value(self, 0);
    const T* K = detail::parent_value(self, 1);
    T* gX = detail::parent_grad(self, 0);
    T* gK = detail::parent_grad(self, 1);
    const T* G = self.grad.data();
    visit([&](std::size_t ipos, std::size_t kpos, std::size_t opos) {
      const T* go = G + opos * co;
      for (std::size_t a = 0; a < ci; ++a) {
        const T* krow = K + (kpos * ci + a) * co;
        if (gX) {
          T s = T(0);
          for (std::size_t b = 0; b < co; ++b) s += krow[b] * go[b];
          gX[ipos * ci + a] += s;
        }
        if (gK) {
          T* gk = gK + (kpos * ci + a) * co;
          const T xv = X[ipos * ci + a];
          for (std::size_t b = 0; b < co; ++b) gk[b] += xv * go[b];
        }
      }
    });
  });
}

// --------------------------------------------------------------- resampling

namespace detail {

inline Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t a = s.size(); a-- > 1;) st[a - 1] = st[a] * s[a];
  return st;
}

}  // namespace detail

// Stride-2 average pooling on the flagged axes (all but the last, channel,
// axis may be flagged). Odd extents round up; edge windows average what they
// cover.
template <class T>
Tensor<T> downsample2(const Tensor<T>& x, std::vector<bool> axes) {
  detail::require(axes.size() + 1 == x.rank(), "downsample2: one flag per non-channel axis");
  Shape in = x.shape(), out = in;
  for (std::size_t a = 0; a < axes.size(); ++a)
    if (axes[a]) out[a] = (in[a] + 1) / 2;
  const Shape si = detail::strides_of(in), so = detail::strides_of(out);
  std::vector<std::size_t> map(x.size());
  std::vector<T> count(numel(out), T(0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t rem = i, o = 0;
    for (std::size_t a = 0; a < in.size(); ++a) {
      std::size_t idx = rem / si[a];
      rem %= si[a];
      if (a < axes.size() && axes[a]) idx /= 2;
      o += idx * so[a];
    }
    map[i] = o;
    count[o] += T(1);
  }
  std::vector<T> y(numel(out), T(0));
  for (std::size_t i = 0; i < x.size(); ++i) y[map[i]] += x.values()[i];
  for (std::size_t o = 0; o < y.size(); ++o) y[o] /= count[o];
  return Tensor<T>::from_op(std::move(out), std::move(y), {x},
                            [map = std::move(map), count = std::move(count)](Node<T>& self) {
                              if (T* g = detail::parent_grad(self, 0))
                                for (std::size_t i = 0; i < map.size(); ++i) g[i] += self.grad[map[i]] / count[map[i]];
                            });
}

// Nearest-neighbour x2 upsampling on the flagged axes.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x, std::vector<bool> axes) {
  detail::require(axes.size() + 1 == x.rank(), "upsample2: one flag per non-channel axis");
  Shape in = x.shape(), out = in;
  for (std::size_t a = 0; a < axes.size(); ++a)
    if (axes[a]) out[a] = 2 * in[a];
  const Shape si = detail::strides_of(in), so = detail::strides_of(out);
  std::vector<std::size_t> map(numel(out));
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t rem = o, i = 0;
    for (std::size_t a = 0; a < out.size(); ++a) {
      std::size_t idx = rem / so[a];
      rem %= so[a];
      if (a < axes.size() && axes[a]) idx /= 2;
      i += idx * si[a];
    }
    map[o] = i;
  }
  std::vector<T> y(map.size());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.values()[map[o]];
  return Tensor<T>::from_op(std::move(out), std::move(y), {x}, [map = std::move(map)](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
  });
}

// Mean over one axis; the axis is removed from the shape.
template <class T>
Tensor<T> mean_over_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank(), "mean_over_axis: axis out of range");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t len = s[axis];
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> y(outer * inner, T(0));
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += x.values()[(o * len + l) * inner + i] * inv;
  return Tensor<T>::from_op(std::move(out), std::move(y), {x}, [outer, inner, len, inv](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i] * inv;
  });
}

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel-centre sampling positions, clamped at the borders.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

// x [H, W, C] -> [out_h, out_w, C].
template <class T>
Tensor<T> resample2d_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require(x.rank() == 3 && out_h > 0 && out_w > 0, "resample2d_bilinear: expects [H, W, C]");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto th = detail::lerp_taps(H, out_h);
  auto tw = detail::lerp_taps(W, out_w);
  auto visit = [=](auto&& f) {
    for (std::size_t a = 0; a < out_h; ++a)
      for (std::size_t b = 0; b < out_w; ++b) {
        const auto& ph = th[a];
        const auto& pw = tw[b];
        const T wh1 = static_cast<T>(ph.w1), wh0 = T(1) - wh1;
        const T ww1 = static_cast<T>(pw.w1), ww0 = T(1) - ww1;
        const std::size_t o = a * out_w + b;
        f(o, ph.i0 * W + pw.i0, wh0 * ww0);
        f(o, ph.i0 * W + pw.i1, wh0 * ww1);
        f(o, ph.i1 * W + pw.i0, wh1 * ww0);
        f(o, ph.i1 * W + pw.i1, wh1 * ww1);
      }
  };
  std::vector<T> y(out_h * out_w * C, T(0));
  const T* X = x.values().data();
  visit([&](std::size_t o, std::size_t i, T w) {
    if (w == T(0)) return;
    for (std::size_t c = 0; c < C; ++c) y[o * C + c] += w * X[i * C + c];
  });
  return Tensor<T>::from_op({out_h, out_w, C}, std::move(y), {x}, [visit, C](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0))
      visit([&](std::size_t o, std::size_t i, T w) {
        if (w == T(0)) return;
        for (std::size_t c = 0; c < C; ++c) g[i * C + c] += w * self.grad[o * C + c];
      });
  });
}

// ------------------------------------------------------------------- losses

// mean |p - t|
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.size() == target.size(), "l1_loss: size mismatch");
  T s = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.values()[i] - target.values()[i]);
  const T inv = T(1) / static_cast<T>(pred.size());
  return Tensor<T>::from_op({}, {s * inv}, {pred, target}, [inv](Node<T>& self) {
    const T* p = detail::parent_value(self, 0);
    const T* t = detail::parent_value(self, 1);
    const std::size_t n = self.parents[0]->value.size();
    T* gp = detail::parent_grad(self, 0);
    T* gt = detail::parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = p[i] - t[i];
      const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (gp) gp[i] += self.grad[0] * sgn * inv;
      if (gt) gt[i] -= self.grad[0] * sgn * inv;
    }
  });
}

inline constexpr double kDiceEps = 1e-6;

// Soft Dice on maps min-max normalized by the target's range:
// 1 - (2 sum(p't') + eps) / (sum(p'^2) + sum(t'^2) + eps). The target is
// treated as data; no gradient flows into it.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require(pred.size() == target.size(), "dice_loss: size mismatch");
  const auto tv = target.values();
  const T lo = *std::min_element(tv.begin(), tv.end());
  const T hi = *std::max_element(tv.begin(), tv.end());
  const T range = hi > lo ? hi - lo : T(1);
  const T eps = static_cast<T>(kDiceEps);
  T inter = T(0), pp = T(0), tt = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T p = (pred.values()[i] - lo) / range, t = (tv[i] - lo) / range;
    inter += p * t;
    pp += p * p;
    tt += t * t;
  }
  const T num = T(2) * inter + eps, den = pp + tt + eps;
  return Tensor<T>::from_op({}, {T(1) - num / den}, {pred, target}, [lo, range, num, den](Node<T>& self) {
    T* gp = detail::parent_grad(self, 0);
    if (!gp) return;
    const T* p = detail::parent_value(self, 0);
    const T* t = detail::parent_value(self, 1);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T pn = (p[i] - lo) / range, tn = (t[i] - lo) / range;
      const T d = -(T(2) * tn * den - num * T(2) * pn) / (den * den);
      gp[i] += self.grad[0] * d / range;
    }
  });
}

}  // namespace pdn::ad
