#pragma once

// Shared oracles for the test suite. The gradient oracle is central finite
// differences with step 1e-5; the relative-error guard clamps the denominator
// so exact-zero gradients compare cleanly.

#include <algorithm>
#include <cmath>
#include <functional>

#include "biacl/tensor.hpp"

namespace testutil {

inline constexpr double kFdStep = 1e-5;

/// d f / d x_i by central differences. f() must read the current contents of
/// x on every call (the graph is rebuilt per evaluation).
inline biacl::Tensor fd_gradient(const std::function<double()>& f, biacl::Tensor& x,
                                 double h = kFdStep) {
  biacl::Tensor g = biacl::Tensor::zeros(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    double orig = x.data[i];
    x.data[i] = orig + h;
    double fp = f();
    x.data[i] = orig - h;
    double fm = f();
    x.data[i] = orig;
    g.data[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_err(const biacl::Tensor& a, const biacl::Tensor& b,
                          double floor = 1e-3) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double denom = std::max({std::fabs(a.data[i]), std::fabs(b.data[i]), floor});
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
