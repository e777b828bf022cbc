#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/rng.hpp"

// Dense helpers for the small c x c matrices of the invertible 1x1
// convolution. Matrices are row-major std::vector<T> of length n*n.
namespace glow::linalg {

template <typename T>
inline T& at(std::vector<T>& m, int n, int i, int j) {
  return m[static_cast<std::size_t>(i) * n + j];
}
template <typename T>
inline T at(const std::vector<T>& m, int n, int i, int j) {
  return m[static_cast<std::size_t>(i) * n + j];
}

template <typename T>
std::vector<T> identity(int n) {
  std::vector<T> m(static_cast<std::size_t>(n) * n, T(0));
  for (int i = 0; i < n; ++i) at(m, n, i, i) = T(1);
  return m;
}

template <typename T>
std::vector<T> mat_mul(const std::vector<T>& a, const std::vector<T>& b,
                       int n) {
  std::vector<T> c(static_cast<std::size_t>(n) * n, T(0));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const T aik = at(a, n, i, k);
      if (aik == T(0)) continue;
      for (int j = 0; j < n; ++j) at(c, n, i, j) += aik * at(b, n, k, j);
    }
  }
  return c;
}

template <typename T>
std::vector<T> transpose(const std::vector<T>& a, int n) {
  std::vector<T> t(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) at(t, n, j, i) = at(a, n, i, j);
  return t;
}

// Compact partial-pivot LU: PA = LU with L unit-lower and U upper, both
// packed into lu. piv[k] is the row swapped into position k at step k.
template <typename T>
struct LuFactors {
  int n = 0;
  std::vector<T> lu;
  std::vector<int> piv;
  int sign = 1;
};

template <typename T>
LuFactors<T> lu_factor(const std::vector<T>& a, int n,
                       T pivot_guard = T(1e-12)) {
  LuFactors<T> f;
  f.n = n;
  f.lu = a;
  f.piv.resize(n);
  for (int k = 0; k < n; ++k) {
    int p = k;
    T best = std::abs(at(f.lu, n, k, k));
    for (int i = k + 1; i < n; ++i) {
      const T v = std::abs(at(f.lu, n, i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (!(best > pivot_guard)) {
      throw SingularError("lu_factor: pivot " + std::to_string(k) +
                          " below guard");
    }
    f.piv[k] = p;
    if (p != k) {
      f.sign = -f.sign;
      for (int j = 0; j < n; ++j)
        std::swap(at(f.lu, n, k, j), at(f.lu, n, p, j));
    }
    const T pivot = at(f.lu, n, k, k);
    for (int i = k + 1; i < n; ++i) {
      const T m = at(f.lu, n, i, k) / pivot;
      at(f.lu, n, i, k) = m;
      for (int j = k + 1; j < n; ++j) at(f.lu, n, i, j) -= m * at(f.lu, n, k, j);
    }
  }
  return f;
}

template <typename T>
double lu_logabsdet(const LuFactors<T>& f) {
  double acc = 0;
  for (int i = 0; i < f.n; ++i)
    acc += std::log(std::abs(static_cast<double>(at(f.lu, f.n, i, i))));
  return acc;
}

template <typename T>
double lu_det_sign(const LuFactors<T>& f) {
  double s = f.sign;
  for (int i = 0; i < f.n; ++i)
    s *= at(f.lu, f.n, i, i) < T(0) ? -1.0 : 1.0;
  return s;
}

// Solves A x = b in place using the factorization.
template <typename T>
void lu_solve(const LuFactors<T>& f, T* b) {
  const int n = f.n;
  for (int k = 0; k < n; ++k) {
    if (f.piv[k] != k) std::swap(b[k], b[f.piv[k]]);
  }
  for (int i = 1; i < n; ++i) {
    T s = b[i];
    for (int j = 0; j < i; ++j) s -= at(f.lu, n, i, j) * b[j];
    b[i] = s;
  }
  for (int i = n - 1; i >= 0; --i) {
    T s = b[i];
    for (int j = i + 1; j < n; ++j) s -= at(f.lu, n, i, j) * b[j];
    b[i] = s / at(f.lu, n, i, i);
  }
}

template <typename T>
std::vector<T> mat_inverse(const std::vector<T>& a, int n) {
  const LuFactors<T> f = lu_factor(a, n);
  std::vector<T> inv(static_cast<std::size_t>(n) * n, T(0));
  std::vector<T> col(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) col[i] = i == j ? T(1) : T(0);
    lu_solve(f, col.data());
    for (int i = 0; i < n; ++i) at(inv, n, i, j) = col[i];
  }
  return inv;
}

// Random rotation (orthogonal, det +1) via Householder QR of a seeded
// Gaussian matrix, with the R-diagonal sign fix so Q is uniquely determined.
inline std::vector<double> random_rotation(int n, Rng& rng) {
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (double& v : a) v = rng.normal();

  std::vector<double> q = identity<double>(n);
  std::vector<double> r = a;
  std::vector<double> v(n);
  for (int k = 0; k < n - 1; ++k) {
    double norm = 0;
    for (int i = k; i < n; ++i) norm += at(r, n, i, k) * at(r, n, i, k);
    norm = std::sqrt(norm);
    if (norm == 0) continue;
    const double alpha = at(r, n, k, k) >= 0 ? -norm : norm;
    double vnorm2 = 0;
    for (int i = k; i < n; ++i) {
      v[i] = at(r, n, i, k) - (i == k ? alpha : 0.0);
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0) continue;
    // Apply H = I - 2 v v^T / (v^T v) to R (left) and accumulate into Q.
    for (int j = k; j < n; ++j) {
      double dot = 0;
      for (int i = k; i < n; ++i) dot += v[i] * at(r, n, i, j);
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) at(r, n, i, j) -= f * v[i];
    }
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int i = k; i < n; ++i) dot += v[i] * at(q, n, j, i);
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) at(q, n, j, i) -= f * v[i];
    }
  }
  // Make diag(R) positive, then flip one column if det(Q) = -1 so the
  // result is a proper rotation.
  for (int j = 0; j < n; ++j) {
    if (at(r, n, j, j) < 0) {
      for (int i = 0; i < n; ++i) at(q, n, i, j) = -at(q, n, i, j);
    }
  }
  const LuFactors<double> f = lu_factor(q, n);
  if (lu_det_sign(f) < 0) {
    for (int i = 0; i < n; ++i) at(q, n, i, 0) = -at(q, n, i, 0);
  }
  return q;
}

}  // namespace glow::linalg
