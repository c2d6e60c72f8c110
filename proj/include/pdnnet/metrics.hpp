#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdn {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kPsnrCapDb = 100.0;

namespace detail {

inline void require_same(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("metric inputs differ in size");
  if (a.empty()) throw std::invalid_argument("metric inputs are empty");
}

inline double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

// Mean absolute error over the label's range; NaN for a constant label.
inline double nmae(std::span<const double> pred, std::span<const double> label) {
  detail::require_same(pred, label);
  const auto [lo, hi] = std::minmax_element(label.begin(), label.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return kNaN;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - label[i]);
  return s / static_cast<double>(pred.size()) / range;
}

inline double r2(std::span<const double> pred, std::span<const double> label) {
  detail::require_same(pred, label);
  const double mu = detail::mean(label);
  double res = 0, tot = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    res += (label[i] - pred[i]) * (label[i] - pred[i]);
    tot += (label[i] - mu) * (label[i] - mu);
  }
  if (!(tot > 0)) return kNaN;
  return 1.0 - res / tot;
}

// Peak value 1; capped when the error vanishes.
inline double psnr(std::span<const double> pred, std::span<const double> label) {
  detail::require_same(pred, label);
  double mse = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - label[i]) * (pred[i] - label[i]);
  mse /= static_cast<double>(pred.size());
  if (mse < 1e-10) return kPsnrCapDb;
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

inline double ssim_term(double mx, double my, double vx, double vy, double cxy, const SsimParams& p) {
  return ((2 * mx * my + p.c1) * (2 * cxy + p.c2)) / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
}

// Symmetric padding index: -1 -> 0, n -> n-1.
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= m) i = i < 0 ? -i - 1 : 2 * m - i - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Mean local SSIM with a separable Gaussian window and symmetric padding.
// Maps narrower than the window in either direction are scored with one
// uniform window covering the whole map.
inline double ssim(std::span<const double> pred, std::span<const double> label, std::size_t rows, std::size_t cols,
                   const SsimParams& p = {}) {
  detail::require_same(pred, label);
  if (rows * cols != pred.size()) throw std::invalid_argument("ssim: map size does not match rows x cols");
  const std::size_t n = pred.size();
  if (rows < p.window || cols < p.window) {
    const double mx = detail::mean(pred), my = detail::mean(label);
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      vx += (pred[i] - mx) * (pred[i] - mx);
      vy += (label[i] - my) * (label[i] - my);
      cxy += (pred[i] - mx) * (label[i] - my);
    }
    const double inv = 1.0 / static_cast<double>(n);
    return detail::ssim_term(mx, my, vx * inv, vy * inv, cxy * inv, p);
  }

  const auto half = static_cast<std::ptrdiff_t>(p.window / 2);
  std::vector<double> g(p.window);
  double gs = 0;
  for (std::size_t k = 0; k < p.window; ++k) {
    const double d = static_cast<double>(static_cast<std::ptrdiff_t>(k) - half);
    g[k] = std::exp(-d * d / (2 * p.sigma * p.sigma));
    gs += g[k];
  }
  for (double& v : g) v /= gs;

  // Five filtered fields: x, y, xx, yy, xy.
  std::array<std::vector<double>, 5> src, tmp, out;
  for (auto& v : src) v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[0][i] = pred[i];
    src[1][i] = label[i];
    src[2][i] = pred[i] * pred[i];
    src[3][i] = label[i] * label[i];
    src[4][i] = pred[i] * label[i];
  }
  for (std::size_t f = 0; f < 5; ++f) {
    tmp[f].assign(n, 0.0);
    out[f].assign(n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < p.window; ++k)
          s += g[k] * src[f][r * cols + detail::reflect(static_cast<std::ptrdiff_t>(c + k) - half, cols)];
        tmp[f][r * cols + c] = s;
      }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < p.window; ++k)
          s += g[k] * tmp[f][detail::reflect(static_cast<std::ptrdiff_t>(r + k) - half, rows) * cols + c];
        out[f][r * cols + c] = s;
      }
  }
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = out[0][i], my = out[1][i];
    total += detail::ssim_term(mx, my, out[2][i] - mx * mx, out[3][i] - my * my, out[4][i] - mx * my, p);
  }
  return total / static_cast<double>(n);
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  detail::require_same(a, b);
  const double ma = detail::mean(a), mb = detail::mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0) || !(sbb > 0)) return kNaN;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// 1-based ranks; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  detail::require_same(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

namespace detail {

// Counts pairs i < j with v[i] > v[j] while merge-sorting v.
inline std::uint64_t count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t inv = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size()), hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inv += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    v.swap(buf);
  }
  return inv;
}

inline std::uint64_t tie_pairs_sorted(const std::vector<double>& v) {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    const std::uint64_t run = j - i;
    t += run * (run - 1) / 2;
    i = j;
  }
  return t;
}

}  // namespace detail

// Kendall tau-b in O(n log n).
inline double kendall(std::span<const double> a, std::span<const double> b) {
  detail::require_same(a, b);
  const std::size_t n = a.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  std::uint64_t ties_a = 0, ties_ab = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && a[idx[j]] == a[idx[i]]) ++j;
    ties_a += static_cast<std::uint64_t>(j - i) * (j - i - 1) / 2;
    for (std::size_t k = i; k < j;) {
      std::size_t m = k;
      while (m < j && b[idx[m]] == b[idx[k]]) ++m;
      ties_ab += static_cast<std::uint64_t>(m - k) * (m - k - 1) / 2;
      k = m;
    }
    i = j;
  }
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = b[idx[i]];
  const std::uint64_t swaps = detail::count_inversions(ys);
  const std::uint64_t ties_b = detail::tie_pairs_sorted(ys);
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double den = std::sqrt((n0 - static_cast<double>(ties_a)) * (n0 - static_cast<double>(ties_b)));
  if (!(den > 0)) return kNaN;
  const double num = n0 - static_cast<double>(ties_a) - static_cast<double>(ties_b) + static_cast<double>(ties_ab) -
                     2.0 * static_cast<double>(swaps);
  return std::clamp(num / den, -1.0, 1.0);
}

// q-quantile with linear interpolation between order statistics.
inline double quantile(std::span<const double> v, double q) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

// Hotspot AUC: positives are label entries above the label's q-quantile,
// scored by pred; rank-sum form with average ranks for ties.
inline double auc_hotspot(std::span<const double> pred, std::span<const double> label, double q = 0.9) {
  detail::require_same(pred, label);
  const double thr = quantile(label, q);
  const auto ranks = average_ranks(pred);
  double pos_rank = 0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] > thr) {
      pos_rank += ranks[i];
      ++npos;
    }
  const std::size_t nneg = label.size() - npos;
  if (npos == 0 || nneg == 0) return kNaN;
  const double np = static_cast<double>(npos);
  return (pos_rank - np * (np + 1) / 2) / (np * static_cast<double>(nneg));
}

// --------------------------------------------------------------- reports

inline const std::array<const char*, 8> kMetricNames{"NMAE", "R2", "PSNR", "SSIM", "Pear", "Spea", "Kend", "AUC"};

struct MetricsReport {
  double nmae = kNaN, r2 = kNaN, psnr_db = kNaN, ssim = kNaN, pearson = kNaN, spearman = kNaN, kendall = kNaN,
         auc = kNaN;

  std::array<double, 8> as_array() const { return {nmae, r2, psnr_db, ssim, pearson, spearman, kendall, auc}; }
  static MetricsReport from_array(const std::array<double, 8>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
  }
};

inline MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> label, std::size_t rows,
                                     std::size_t cols) {
  MetricsReport m;
  m.nmae = nmae(pred, label);
  m.r2 = r2(pred, label);
  m.psnr_db = psnr(pred, label);
  m.ssim = ssim(pred, label, rows, cols);
  m.pearson = pearson(pred, label);
  m.spearman = spearman(pred, label);
  m.kendall = kendall(pred, label);
  m.auc = auc_hotspot(pred, label);
  return m;
}

// Per-metric means over reports; NaN entries are left out and counted.
struct MetricsSummary {
  MetricsReport mean;
  std::array<std::size_t, 8> excluded{};
};

inline MetricsSummary summarize(const std::vector<MetricsReport>& reports) {
  MetricsSummary s;
  std::array<double, 8> sum{};
  std::array<std::size_t, 8> count{};
  for (const auto& r : reports) {
    const auto a = r.as_array();
    for (std::size_t k = 0; k < 8; ++k) {
      if (std::isnan(a[k])) {
        ++s.excluded[k];
      } else {
        sum[k] += a[k];
        ++count[k];
      }
    }
  }
  std::array<double, 8> m;
  for (std::size_t k = 0; k < 8; ++k) m[k] = count[k] ? sum[k] / static_cast<double>(count[k]) : kNaN;
  s.mean = MetricsReport::from_array(m);
  return s;
}

}  // namespace pdn
