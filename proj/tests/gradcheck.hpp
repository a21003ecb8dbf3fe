// Finite-difference gradient oracle. Analytic gradients from the float32
// backward pass are compared against central differences of an independent
// double-precision forward (see ref_math.hpp).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ganimc/tensor.hpp"
#include "ref_math.hpp"

namespace tst {

using refm::vd;

inline vd to_d(const std::vector<float>& v) { return vd(v.begin(), v.end()); }

template <class F>
double central_diff(F&& f, vd& x, size_t i, double h) {
  const double orig = x[i];
  x[i] = orig + h;
  const double up = f();
  x[i] = orig - h;
  const double dn = f();
  x[i] = orig;
  return (up - dn) / (2.0 * h);
}

// Worst relative disagreement between the analytic gradient buffer of `t` and
// central differences of the scalar function `f` with respect to `xd` (which
// must alias the values `f` reads). Entries whose magnitude falls below
// floor_frac times the largest magnitude seen are skipped as numerical noise.
template <class F>
double max_rel_error(const ganimc::TensorPtr& t, vd& xd, F&& f, double h = 1e-3,
                     double floor_frac = 1e-4) {
  vd fd(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) fd[i] = central_diff(f, xd, i, h);
  double gmax = 0.0;
  for (size_t i = 0; i < xd.size(); ++i) {
    const double an = t->has_grad() ? static_cast<double>(t->grad[i]) : 0.0;
    gmax = std::max(gmax, std::max(std::fabs(an), std::fabs(fd[i])));
  }
  const double floor_ = std::max(1e-9, floor_frac * gmax);
  double worst = 0.0;
  for (size_t i = 0; i < xd.size(); ++i) {
    const double an = t->has_grad() ? static_cast<double>(t->grad[i]) : 0.0;
    const double m = std::max(std::fabs(an), std::fabs(fd[i]));
    if (m < floor_) continue;
    worst = std::max(worst, std::fabs(an - fd[i]) / m);
  }
  return worst;
}

// Sampled variant with a smoothness filter for deep rectifier stacks: an
// index whose central difference shifts between step h and h/16 sits on a
// discrete decision boundary (a unit within rounding distance of zero), where
// the float forward and the 64-bit reference can legitimately pick different
// branches. Such indices are excluded; `kept` reports how many survived so
// callers can require a quorum.
template <class F>
double max_rel_error_filtered(const ganimc::TensorPtr& t, vd& xd, F&& f,
                              const std::vector<size_t>& indices, double h,
                              size_t* kept, double floor_frac = 1e-4,
                              double stability_tol = 5e-3) {
  std::vector<size_t> stable;
  vd fd;
  for (size_t idx : indices) {
    const double coarse = central_diff(f, xd, idx, h);
    const double fine = central_diff(f, xd, idx, h / 16.0);
    const double m = std::max(std::fabs(coarse), std::fabs(fine));
    if (m > 1e-9 && std::fabs(coarse - fine) / m > stability_tol) continue;
    stable.push_back(idx);
    fd.push_back(fine);
  }
  if (kept) *kept = stable.size();
  double gmax = 0.0;
  for (size_t j = 0; j < stable.size(); ++j) {
    const double an =
        t->has_grad() ? static_cast<double>(t->grad[stable[j]]) : 0.0;
    gmax = std::max(gmax, std::max(std::fabs(an), std::fabs(fd[j])));
  }
  const double floor_ = std::max(1e-9, floor_frac * gmax);
  double worst = 0.0;
  for (size_t j = 0; j < stable.size(); ++j) {
    const double an =
        t->has_grad() ? static_cast<double>(t->grad[stable[j]]) : 0.0;
    const double m = std::max(std::fabs(an), std::fabs(fd[j]));
    if (m < floor_) continue;
    worst = std::max(worst, std::fabs(an - fd[j]) / m);
  }
  return worst;
}

// Sampled variant for expensive forwards: differences are taken only at the
// given indices, with the noise floor computed over that subset.
template <class F>
double max_rel_error_sampled(const ganimc::TensorPtr& t, vd& xd, F&& f,
                             const std::vector<size_t>& indices, double h = 1e-3,
                             double floor_frac = 1e-4) {
  vd fd(indices.size());
  for (size_t j = 0; j < indices.size(); ++j)
    fd[j] = central_diff(f, xd, indices[j], h);
  double gmax = 0.0;
  for (size_t j = 0; j < indices.size(); ++j) {
    const double an =
        t->has_grad() ? static_cast<double>(t->grad[indices[j]]) : 0.0;
    gmax = std::max(gmax, std::max(std::fabs(an), std::fabs(fd[j])));
  }
  const double floor_ = std::max(1e-9, floor_frac * gmax);
  double worst = 0.0;
  for (size_t j = 0; j < indices.size(); ++j) {
    const double an =
        t->has_grad() ? static_cast<double>(t->grad[indices[j]]) : 0.0;
    const double m = std::max(std::fabs(an), std::fabs(fd[j]));
    if (m < floor_) continue;
    worst = std::max(worst, std::fabs(an - fd[j]) / m);
  }
  return worst;
}

}  // namespace tst
