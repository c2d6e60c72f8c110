#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "../rng.hpp"
#include "tensor.hpp"

namespace pdn::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes straddling a kink
};

// Compares reverse-mode gradients of a scalar program against central
// differences. At most max_entries coordinates per parameter are probed,
// chosen by seed. Relative error: |a - n| / max(|a|, |n|, floor).
// A probe whose differences at eps and eps/2 disagree has a non-smooth point
// (relu kink) inside the stencil; it is counted in `skipped` instead.
template <class T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, double eps = 1e-5,
                           std::size_t max_entries = 64, std::uint64_t seed = 1, double floor = 1e-8) {
  for (auto& p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<T>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }
  GradCheckResult res;
  Rng rng(seed);
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_values();
    std::vector<std::size_t> idx(w.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_entries) {
      rng.shuffle(idx);
      idx.resize(max_entries);
    }
    for (std::size_t i : idx) {
      const T orig = w[i];
      auto central = [&](double h) {
        w[i] = static_cast<T>(orig + h);
        const double up = f().item();
        w[i] = static_cast<T>(orig - h);
        const double dn = f().item();
        w[i] = orig;
        return (up - dn) / (2 * h);
      };
      const double num = central(eps);
      const double half = central(eps / 2);
      if (std::abs(num - half) > std::max(1e-3 * std::max(std::abs(num), std::abs(half)), 1e-9)) {
        ++res.skipped;
        continue;
      }
      const double a = analytic[k][i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      res.max_rel_error = std::max(res.max_rel_error, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace pdn::ad
