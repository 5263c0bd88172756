#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "smoa/rng.hpp"
#include "smoa/tensor.hpp"
#include "smoa/train.hpp"

namespace smoa::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Central finite differences of f() with respect to every element of the
// leaf tensor x; f must recompute the forward from scratch.
inline std::vector<double> central_diff(const std::function<double()>& f, Tensor x,
                                        double h = 1e-5) {
  auto vals = x.mutable_values();
  std::vector<double> g(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double fp = f();
    vals[i] = keep - h;
    const double fm = f();
    vals[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Max relative error between the analytic gradient accumulated in `leaf`
// and central differences of `f` over it.
inline double grad_vs_fd(const std::function<double()>& f, Tensor leaf, double h = 1e-5) {
  std::vector<double> numeric = central_diff(f, leaf, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
    worst = std::max(worst, rel_err(analytic, numeric[i]));
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace smoa::testing
