#pragma once

// One-sided (Hestenes) Jacobi SVD for dense square matrices.
//
// Columns of a working copy W = M are rotated pairwise until every pair is
// orthogonal to a relative tolerance; V accumulates the rotations, the
// singular values are the final column norms and U = W diag(1/S).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "impactlab/error.hpp"
#include "impactlab/matrix.hpp"

namespace impactlab {

struct SvdResult {
  Matrix u;               // columns are left singular vectors
  std::vector<double> s;  // descending
  Matrix v;               // columns are right singular vectors
  int sweeps = 0;
};

struct SvdOptions {
  double tolerance = 1e-14;
  int max_sweeps = 60;
};

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

inline void rotate(double* a, double* b, std::size_t n, double c, double s) {
  for (std::size_t k = 0; k < n; ++k) {
    const double x = a[k];
    const double y = b[k];
    a[k] = c * x - s * y;
    b[k] = s * x + c * y;
  }
}

}  // namespace detail

/// Throws domain_error on non-finite input and convergence_error when the
/// sweep limit is reached. The largest-magnitude entry of every U column is
/// positive; equal singular values keep their original column order.
inline SvdResult svd(const Matrix& m, SvdOptions opt = {}) {
  if (!m.square()) throw incompatible_error("svd: matrix must be square");
  if (!all_finite(m)) throw domain_error("svd: non-finite entry");
  const std::size_t n = m.rows();

  // column-major working storage
  std::vector<double> w(n * n), v(n * n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) w[c * n + r] = m(r, c);
  for (std::size_t c = 0; c < n; ++c) v[c * n + c] = 1.0;

  SvdResult out;
  bool converged = n < 2;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    out.sweeps = sweep + 1;
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      double* wp = &w[p * n];
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wq = &w[q * n];
        const double alpha = detail::dot(wp, wp, n);
        const double beta = detail::dot(wq, wq, n);
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = detail::dot(wp, wq, n);
        if (std::abs(gamma) <= opt.tolerance * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        detail::rotate(wp, wq, n, c, s);
        detail::rotate(&v[p * n], &v[q * n], n, c, s);
      }
    }
    converged = !rotated;
  }
  if (!converged)
    throw convergence_error("svd: no convergence after " + std::to_string(opt.max_sweeps) +
                            " sweeps");

  std::vector<double> sigma(n);
  for (std::size_t c = 0; c < n; ++c) sigma[c] = std::sqrt(detail::dot(&w[c * n], &w[c * n], n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  out.u = Matrix(n, n);
  out.v = Matrix(n, n);
  out.s.resize(n);
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = order[k];
    out.s[k] = sigma[c];
    for (std::size_t r = 0; r < n; ++r) out.v(r, k) = v[c * n + r];
    if (sigma[c] > 0.0) {
      for (std::size_t r = 0; r < n; ++r) out.u(r, k) = w[c * n + r] / sigma[c];
      filled[k] = true;
    }
  }

  // Null-space columns of U: complete to an orthonormal basis from the unit
  // vectors with the largest residual after projection (twice, for accuracy).
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < n; ++e) {
      std::vector<double> cand(n, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < n; ++j) {
          if (!filled[j]) continue;
          double d = 0.0;
          for (std::size_t r = 0; r < n; ++r) d += out.u(r, j) * cand[r];
          for (std::size_t r = 0; r < n; ++r) cand[r] -= d * out.u(r, j);
        }
      }
      const double nrm = std::sqrt(detail::dot(cand.data(), cand.data(), n));
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = std::move(cand);
      }
    }
    for (std::size_t r = 0; r < n; ++r) out.u(r, k) = best[r] / best_norm;
    filled[k] = true;
  }

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < n; ++r)
      if (std::abs(out.u(r, k)) > std::abs(out.u(arg, k))) arg = r;
    if (out.u(arg, k) < 0.0) {
      for (std::size_t r = 0; r < n; ++r) {
        out.u(r, k) = -out.u(r, k);
        out.v(r, k) = -out.v(r, k);
      }
    }
  }
  return out;
}

/// U diag(S) Vᵀ
inline Matrix reconstruct(const SvdResult& d) {
  const std::size_t n = d.s.size();
  Matrix us = d.u;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) us(r, c) *= d.s[c];
  return us * d.v.transpose();
}

/// Imputes missing entries (mask true) with 0; returns the number imputed.
inline std::size_t impute_zero(Matrix& m, const std::vector<bool>& missing) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < missing.size(); ++k) {
    if (missing[k]) {
      m.values()[k] = 0.0;
      ++n;
    }
  }
  return n;
}

}  // namespace impactlab
