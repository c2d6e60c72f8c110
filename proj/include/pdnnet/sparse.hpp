#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace pdn {

// Compressed sparse row matrix with sorted, duplicate-free column indices.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  // Builds from (row, col, value) triplets; duplicates are summed.
  static CsrMatrix from_triplets(std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t) {
    std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    CsrMatrix m;
    m.n = n;
    m.row_ptr.assign(n + 1, 0);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto [r, c, v] = t[k];
      if (!m.col.empty() && k > 0 && std::get<0>(t[k - 1]) == r && std::get<1>(t[k - 1]) == c) {
        m.val.back() += v;
        continue;
      }
      m.col.push_back(c);
      m.val.push_back(v);
      ++m.row_ptr[r + 1];
    }
    for (std::size_t i = 0; i < n; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
    return m;
  }

  double at(std::size_t r, std::size_t c) const {
    const auto b = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
    const auto e = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
    const auto it = std::lower_bound(b, e, static_cast<std::uint32_t>(c));
    return (it != e && *it == c) ? val[static_cast<std::size_t>(it - col.begin())] : 0.0;
  }

  void multiply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k] * x[col[k]];
      y[i] = s;
    }
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = at(i, i);
    return d;
  }

  bool is_symmetric() const {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
        if (at(col[k], i) != val[k]) return false;
    return true;
  }
};

class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, double residual)
      : std::runtime_error(what + " (relative residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct SolveStats {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Jacobi-preconditioned conjugate gradient for SPD systems, capped at 20n
// iterations. Returns once ||b - Ax|| <= tol * ||b||. Large diagonal stamps
// make that norm dominated by a few rows, so the loop also requires every
// Jacobi correction |r_i| / A_ii to be within tol * ||x||_inf. Both tests
// are confirmed on the true residual.
inline std::vector<double> solve_pcg(const CsrMatrix& A, std::span<const double> b, double tol = 1e-10,
                                     SolveStats* stats = nullptr) {
  const std::size_t n = A.n;
  std::vector<double> x(n, 0.0);
  const double bnorm = norm2(b);
  if (stats) *stats = {};
  if (bnorm == 0.0) return x;

  std::vector<double> inv_diag = A.diagonal();
  for (double& d : inv_diag) {
    if (!(d > 0)) throw SolveError("matrix has a nonpositive diagonal", 1.0);
    d = 1.0 / d;
  }

  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
  p = z;
  double rz = dot(r, z);
  auto jacobi_ok = [&] {
    double corr = 0.0, xmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      corr = std::max(corr, std::abs(z[i]));
      xmax = std::max(xmax, std::abs(x[i]));
    }
    return corr <= tol * xmax;
  };
  const std::size_t cap = 20 * n;
  double rel = 1.0;
  for (std::size_t it = 1; it <= cap; ++it) {
    A.multiply(p, q);
    const double alpha = rz / dot(p, q);
    if (!std::isfinite(alpha)) throw SolveError("conjugate gradient broke down", rel);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    double rz_next = dot(r, z);
    rel = norm2(r) / bnorm;
    if (rel <= tol && jacobi_ok()) {
      A.multiply(x, q);
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = b[i] - q[i];
        z[i] = inv_diag[i] * r[i];
      }
      rel = norm2(r) / bnorm;
      rz_next = dot(r, z);
      if (rel <= tol && jacobi_ok()) {
        if (stats) *stats = {it, rel};
        return x;
      }
    }
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw SolveError("conjugate gradient did not converge in " + std::to_string(cap) + " iterations", rel);
}

}  // namespace pdn
