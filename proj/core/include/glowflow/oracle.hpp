#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "glowflow/errors.hpp"

// Independent numerical ground truth used by tests and `glow verify`:
// finite-difference Jacobians, brute-force log-determinants and gradient
// checks. This header must stay free of the analytic code paths it
// certifies; in particular it carries its own LU routine instead of
// including linalg.hpp.
namespace glow::oracle {

using VecFn = std::function<std::vector<double>(const std::vector<double>&)>;
using ScalarFn = std::function<double(const std::vector<double>&)>;

struct JacobianEstimate {
  std::size_t dim = 0;
  double step = 0;
  std::vector<double> m;  // dim x dim, row-major: m[i*dim + j] = df_i/dx_j

  double at(std::size_t i, std::size_t j) const { return m[i * dim + j]; }
};

inline constexpr std::size_t kJacobianDimGuard = 64;

// Central-difference Jacobian of a flattened map R^D -> R^D.
inline JacobianEstimate numeric_jacobian(const VecFn& f,
                                         const std::vector<double>& x0,
                                         double h = 1e-5) {
  const std::size_t d = x0.size();
  if (d > kJacobianDimGuard) {
    throw CostGuardError("numeric_jacobian: dim " + std::to_string(d) +
                         " exceeds the " + std::to_string(kJacobianDimGuard) +
                         "-dim cost guard");
  }
  JacobianEstimate est;
  est.dim = d;
  est.step = h;
  est.m.assign(d * d, 0.0);
  std::vector<double> xp = x0, xm = x0;
  for (std::size_t j = 0; j < d; ++j) {
    xp[j] = x0[j] + h;
    xm[j] = x0[j] - h;
    const std::vector<double> fp = f(xp);
    const std::vector<double> fm = f(xm);
    if (fp.size() != d || fm.size() != d) {
      throw ShapeError("numeric_jacobian: f must map R^D to R^D");
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double v = (fp[i] - fm[i]) / (2.0 * h);
      if (!std::isfinite(v)) {
        throw NumericsError("numeric_jacobian: non-finite column entry");
      }
      est.m[i * d + j] = v;
    }
    xp[j] = x0[j];
    xm[j] = x0[j];
  }
  return est;
}

// log|det M| by partial-pivot elimination with |pivot| accumulation.
inline double logabsdet(std::vector<double> m, std::size_t n) {
  if (m.size() != n * n) throw ShapeError("logabsdet: matrix must be square");
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(m[k * n + k]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(m[i * n + k]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (!(best > 1e-12)) {
      throw SingularError("logabsdet: matrix numerically singular");
    }
    if (p != k) {
      for (std::size_t j = k; j < n; ++j) std::swap(m[k * n + j], m[p * n + j]);
    }
    const double pivot = m[k * n + k];
    acc += std::log(std::abs(pivot));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m[i * n + k] / pivot;
      for (std::size_t j = k + 1; j < n; ++j) m[i * n + j] -= f * m[k * n + j];
    }
  }
  return acc;
}

inline double logabsdet(const JacobianEstimate& j) {
  return logabsdet(j.m, j.dim);
}

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double worst_rel = 0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  bool pass(double rel_tol) const { return worst_rel < rel_tol; }
};

// Compares an analytic gradient against central differences of a
// deterministic scalar loss, elementwise. `names` may be empty or give a
// label per parameter index.
inline GradCheckReport gradcheck(const ScalarFn& loss, std::vector<double> x,
                                 const std::vector<double>& analytic,
                                 const std::vector<std::string>& names = {},
                                 double h = 1e-4, double abs_floor = 1e-8) {
  if (analytic.size() != x.size()) {
    throw ShapeError("gradcheck: gradient length must match parameters");
  }
  GradCheckReport rep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = loss(x);
    x[i] = xi - h;
    const double fm = loss(x);
    x[i] = xi;
    const double num = (fp - fm) / (2.0 * h);
    const double ana = analytic[i];
    const double denom = std::max({std::abs(num), std::abs(ana), abs_floor});
    const double rel = std::abs(num - ana) / denom;
    ++rep.checked;
    if (rel > rep.worst_rel) {
      rep.worst_rel = rel;
      rep.worst = {names.size() > i ? names[i] : "param[" + std::to_string(i) + "]",
                   i, ana, num, rel};
    }
  }
  return rep;
}

}  // namespace glow::oracle
