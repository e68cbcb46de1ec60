#pragma once

// Densities of pooled singular-vector entries: histogram estimates and
// maximum-likelihood fits of the normal and the t location-scale
// distribution
//
//   p(x) = Γ((β+1)/2) / (σ √(βπ) Γ(β/2)) · [(β + ((x-μ)/σ)²) / β]^(-(β+1)/2)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <random>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "impactlab/error.hpp"
#include "impactlab/matrix.hpp"
#include "impactlab/svd.hpp"

namespace impactlab {

struct TlsParams {
  double mu = 0.0;
  double sigma = 1.0;
  double beta = 1.0;
  double loglik = 0.0;  // total over the sample
  bool converged = false;
  bool effectively_normal = false;  // β reached the cap
  int iterations = 0;
  double gradient_norm = 0.0;  // in (μ/σ₀, log σ, log β), per observation
};

struct NormalParams {
  double mu = 0.0;
  double sigma = 1.0;
};

inline constexpr double kBetaCap = 1e6;
inline constexpr double kBetaFloor = 1e-3;

inline void check_tls(double sigma, double beta) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw domain_error("tls: sigma must be > 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw domain_error("tls: beta must be > 0");
}

/// log Γ((β+1)/2) - log Γ(β/2) - ½ log(βπ)
inline double tls_log_norm(double beta) {
  return boost::math::lgamma(0.5 * (beta + 1.0)) - boost::math::lgamma(0.5 * beta) -
         0.5 * std::log(beta * std::numbers::pi);
}

inline double tls_logpdf(double x, double mu, double sigma, double beta) {
  check_tls(sigma, beta);
  const double z = (x - mu) / sigma;
  return tls_log_norm(beta) - std::log(sigma) - 0.5 * (beta + 1.0) * std::log1p(z * z / beta);
}

inline double tls_pdf(double x, double mu, double sigma, double beta) {
  return std::exp(tls_logpdf(x, mu, sigma, beta));
}

inline double tls_pdf(double x, const TlsParams& p) { return tls_pdf(x, p.mu, p.sigma, p.beta); }

inline double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

template <typename Rng>
double sample_tls(Rng& rng, double mu, double sigma, double beta) {
  std::student_t_distribution<double> t(beta);
  return mu + sigma * t(rng);
}

template <typename Rng>
std::vector<double> sample_tls(Rng& rng, double mu, double sigma, double beta, std::size_t n) {
  check_tls(sigma, beta);
  std::student_t_distribution<double> t(beta);
  std::vector<double> out(n);
  for (auto& x : out) x = mu + sigma * t(rng);
  return out;
}

/// Sample mean and population standard deviation.
inline NormalParams fit_normal(std::span<const double> data) {
  if (data.size() < 2) throw degenerate_error("fit_normal: fewer than 2 values");
  NormalParams p;
  p.mu = mean(data);
  p.sigma = population_std(data, p.mu);
  if (!(p.sigma > 0.0)) throw degenerate_error("fit_normal: constant sample");
  return p;
}

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// t location-scale maximum likelihood
// ---------------------------------------------------------------------------

/// Mean log-likelihood and its gradient in θ = (m, log σ, log β) where
/// μ = origin + scale·m.
class TlsObjective {
public:
  TlsObjective(std::span<const double> data, double origin, double scale)
    : data_(data), origin_(origin), scale_(scale) {}

  double mu(const std::array<double, 3>& t) const { return origin_ + scale_ * t[0]; }

  /// Returns the mean log-likelihood; fills grad when non-null.
  double eval(const std::array<double, 3>& t, std::array<double, 3>* grad) const {
    const double mu = this->mu(t);
    const double sigma = std::exp(t[1]);
    const double beta = std::exp(t[2]);
    double s_log = 0.0, g_mu = 0.0, g_ls = 0.0, g_lb = 0.0;
    for (double x : data_) {
      const double z = (x - mu) / sigma;
      const double u = z * z;
      const double d = beta + u;
      const double l1p = std::log1p(u / beta);
      s_log += l1p;
      if (grad) {
        g_mu += z / d;
        g_ls += u / d;
        g_lb += (beta + 1.0) * u / d - beta * l1p;
      }
    }
    const double n = static_cast<double>(data_.size());
    const double value = tls_log_norm(beta) - t[1] - 0.5 * (beta + 1.0) * s_log / n;
    if (grad) {
      const double dnorm = 0.5 * beta *
                           (boost::math::digamma(0.5 * (beta + 1.0)) - boost::math::digamma(0.5 * beta));
      (*grad)[0] = scale_ * (beta + 1.0) / sigma * g_mu / n;
      (*grad)[1] = -1.0 + (beta + 1.0) * g_ls / n;
      (*grad)[2] = dnorm - 0.5 + 0.5 * g_lb / n;
    }
    return value;
  }

private:
  std::span<const double> data_;
  double origin_;
  double scale_;
};

struct TlsFitOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 500;
  double beta_cap = kBetaCap;
  double beta_start = 3.0;
};

namespace detail {

using Vec3 = std::array<double, 3>;

inline double norm_free(const Vec3& g, const std::array<bool, 3>& free) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k)
    if (free[k]) s += g[k] * g[k];
  return std::sqrt(s);
}

struct FitState {
  Vec3 theta{};
  Vec3 grad{};
  double value = 0.0;  // mean log-likelihood (maximized)
  int iterations = 0;
};

/// Coordinate 2 (log β) is boxed to [lo, hi]; at a bound with the gradient
/// pointing outward it is held fixed.
inline std::array<bool, 3> free_coords(const FitState& s, double lo, double hi) {
  std::array<bool, 3> f{true, true, true};
  if (s.theta[2] >= hi && s.grad[2] > 0.0) f[2] = false;
  if (s.theta[2] <= lo && s.grad[2] < 0.0) f[2] = false;
  return f;
}

inline void bfgs(const TlsObjective& obj, FitState& s, double lb_lo, double lb_hi,
                 const TlsFitOptions& opt) {
  using Mat3 = std::array<Vec3, 3>;
  auto identity = [] {
    Mat3 h{};
    for (int k = 0; k < 3; ++k) h[k][k] = 1.0;
    return h;
  };
  Mat3 h = identity();
  s.value = obj.eval(s.theta, &s.grad);
  for (; s.iterations < opt.max_iterations; ++s.iterations) {
    const auto free = free_coords(s, lb_lo, lb_hi);
    if (norm_free(s.grad, free) <= opt.gradient_tolerance) return;
    // ascent direction d = H g on free coordinates
    Vec3 d{};
    for (int r = 0; r < 3; ++r) {
      if (!free[r]) continue;
      for (int c = 0; c < 3; ++c)
        if (free[c]) d[r] += h[r][c] * s.grad[c];
    }
    double slope = 0.0;
    for (int k = 0; k < 3; ++k) slope += d[k] * s.grad[k];
    if (!(slope > 0.0)) {
      h = identity();
      for (int k = 0; k < 3; ++k) d[k] = free[k] ? s.grad[k] : 0.0;
      slope = norm_free(s.grad, free);
      slope *= slope;
    }
    double dmax = 0.0;
    for (double x : d) dmax = std::max(dmax, std::abs(x));
    double step = dmax > 2.0 ? 2.0 / dmax : 1.0;

    Vec3 trial{};
    Vec3 tgrad{};
    double tval = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      for (int k = 0; k < 3; ++k) trial[k] = s.theta[k] + step * d[k];
      trial[2] = std::clamp(trial[2], lb_lo, lb_hi);
      tval = obj.eval(trial, &tgrad);
      if (!std::isfinite(tval)) continue;
      if (tval >= s.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      // Below floating-point resolution of the objective: accept when the
      // gradient shrinks.
      if (ls == 0 && std::abs(tval - s.value) <= 1e-13 * std::max(1.0, std::abs(s.value)) &&
          norm_free(tgrad, free) < norm_free(s.grad, free)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) return;

    Vec3 sv{}, yv{};
    for (int k = 0; k < 3; ++k) {
      sv[k] = trial[k] - s.theta[k];
      yv[k] = s.grad[k] - tgrad[k];  // gradient of the minimized -loglik
    }
    s.theta = trial;
    s.grad = tgrad;
    s.value = tval;

    double sy = 0.0, ss = 0.0, yy = 0.0;
    for (int k = 0; k < 3; ++k) {
      sy += sv[k] * yv[k];
      ss += sv[k] * sv[k];
      yy += yv[k] * yv[k];
    }
    if (sy > 1e-12 * std::sqrt(ss * yy)) {
      Vec3 hy{};
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) hy[r] += h[r][c] * yv[c];
      double yhy = 0.0;
      for (int k = 0; k < 3; ++k) yhy += yv[k] * hy[k];
      const double rho = 1.0 / sy;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          h[r][c] += (1.0 + yhy * rho) * rho * sv[r] * sv[c] - rho * (hy[r] * sv[c] + sv[r] * hy[c]);
    }
  }
}

/// Newton steps with a central-difference Hessian of the analytic gradient,
/// accepted while they reduce the gradient norm.
inline void newton_polish(const TlsObjective& obj, FitState& s, double lb_lo, double lb_hi,
                          const TlsFitOptions& opt, int max_steps) {
  for (int it = 0; it < max_steps && s.iterations < opt.max_iterations; ++it, ++s.iterations) {
    const auto free = free_coords(s, lb_lo, lb_hi);
    const double gnorm = norm_free(s.grad, free);
    if (gnorm <= opt.gradient_tolerance) return;
    double hess[3][3]{};
    for (int c = 0; c < 3; ++c) {
      const double h = 1e-5 * std::max(1.0, std::abs(s.theta[c]));
      Vec3 tp = s.theta, tm = s.theta, gp{}, gm{};
      tp[c] += h;
      tm[c] -= h;
      obj.eval(tp, &gp);
      obj.eval(tm, &gm);
      for (int r = 0; r < 3; ++r) hess[r][c] = (gp[r] - gm[r]) / (2.0 * h);
    }
    // solve hess · d = -grad on the free coordinates
    int idx[3];
    int m = 0;
    for (int k = 0; k < 3; ++k)
      if (free[k]) idx[m++] = k;
    double a[3][4]{};
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) a[r][c] = 0.5 * (hess[idx[r]][idx[c]] + hess[idx[c]][idx[r]]);
      a[r][m] = -s.grad[idx[r]];
    }
    bool singular = false;
    for (int p = 0; p < m; ++p) {
      int piv = p;
      for (int r = p + 1; r < m; ++r)
        if (std::abs(a[r][p]) > std::abs(a[piv][p])) piv = r;
      if (std::abs(a[piv][p]) < 1e-300) {
        singular = true;
        break;
      }
      for (int c = 0; c <= m; ++c) std::swap(a[p][c], a[piv][c]);
      for (int r = 0; r < m; ++r) {
        if (r == p) continue;
        const double f = a[r][p] / a[p][p];
        for (int c = p; c <= m; ++c) a[r][c] -= f * a[p][c];
      }
    }
    if (singular) return;
    Vec3 trial = s.theta;
    for (int r = 0; r < m; ++r) trial[idx[r]] += a[r][m] / a[r][r];
    trial[2] = std::clamp(trial[2], lb_lo, lb_hi);
    Vec3 tgrad{};
    const double tval = obj.eval(trial, &tgrad);
    if (!std::isfinite(tval) || norm_free(tgrad, free) >= gnorm) return;
    s.theta = trial;
    s.grad = tgrad;
    s.value = tval;
  }
}

inline void nelder_mead(const TlsObjective& obj, FitState& s, double lb_lo, double lb_hi,
                        int max_evals) {
  auto f = [&](Vec3 t) {
    t[2] = std::clamp(t[2], lb_lo, lb_hi);
    const double v = obj.eval(t, nullptr);
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };
  std::array<Vec3, 4> x{};
  std::array<double, 4> fx{};
  x[0] = s.theta;
  for (int k = 0; k < 3; ++k) {
    x[k + 1] = s.theta;
    x[k + 1][k] += 0.25;
  }
  for (int k = 0; k < 4; ++k) fx[k] = f(x[k]);
  for (int ev = 0; ev < max_evals; ++ev) {
    std::array<int, 4> o{0, 1, 2, 3};
    std::sort(o.begin(), o.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    if (std::abs(fx[o[3]] - fx[o[0]]) <= 1e-15 * (1.0 + std::abs(fx[o[0]]))) break;
    Vec3 c{};
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < 3; ++r) c[r] += x[o[k]][r] / 3.0;
    auto along = [&](double t) {
      Vec3 p{};
      for (int r = 0; r < 3; ++r) p[r] = c[r] + t * (x[o[3]][r] - c[r]);
      return p;
    };
    Vec3 xr = along(-1.0);
    const double fr = f(xr);
    if (fr < fx[o[0]]) {
      Vec3 xe = along(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        x[o[3]] = xe;
        fx[o[3]] = fe;
      } else {
        x[o[3]] = xr;
        fx[o[3]] = fr;
      }
    } else if (fr < fx[o[2]]) {
      x[o[3]] = xr;
      fx[o[3]] = fr;
    } else {
      Vec3 xc = along(fr < fx[o[3]] ? -0.5 : 0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, fx[o[3]])) {
        x[o[3]] = xc;
        fx[o[3]] = fc;
      } else {
        for (int k = 1; k < 4; ++k) {
          for (int r = 0; r < 3; ++r) x[o[k]][r] = x[o[0]][r] + 0.5 * (x[o[k]][r] - x[o[0]][r]);
          fx[o[k]] = f(x[o[k]]);
        }
      }
    }
  }
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (fx[k] < fx[best]) best = k;
  if (-fx[best] > s.value) {
    s.theta = x[best];
    s.theta[2] = std::clamp(s.theta[2], lb_lo, lb_hi);
    s.value = obj.eval(s.theta, &s.grad);
  }
}

}  // namespace detail

/// Maximum-likelihood fit of (μ, σ, β). Starts from the median, 1.4826·MAD
/// and β = 3; quasi-Newton with a Nelder-Mead fallback. β is capped at
/// `beta_cap`; a capped fit is flagged as effectively normal.
inline TlsParams fit_tls(std::span<const double> data, const TlsFitOptions& opt = {}) {
  if (data.size() < 50) throw degenerate_error("fit_tls: need at least 50 observations");
  for (double x : data)
    if (!std::isfinite(x)) throw domain_error("fit_tls: non-finite observation");
  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) throw degenerate_error("fit_tls: constant sample");
  const double med = quantile_sorted(sorted, 0.5);
  std::vector<double> dev(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) dev[k] = std::abs(sorted[k] - med);
  std::sort(dev.begin(), dev.end());
  double scale = 1.4826 * quantile_sorted(dev, 0.5);
  if (!(scale > 0.0)) scale = population_std(sorted, mean(sorted));

  const TlsObjective obj(data, med, scale);
  const double lb_lo = std::log(kBetaFloor);
  const double lb_hi = std::log(opt.beta_cap);
  detail::FitState st;
  st.theta = {0.0, std::log(scale), std::log(opt.beta_start)};

  detail::bfgs(obj, st, lb_lo, lb_hi, opt);
  detail::newton_polish(obj, st, lb_lo, lb_hi, opt, 20);
  if (detail::norm_free(st.grad, detail::free_coords(st, lb_lo, lb_hi)) > opt.gradient_tolerance) {
    detail::nelder_mead(obj, st, lb_lo, lb_hi, 2000);
    detail::bfgs(obj, st, lb_lo, lb_hi, opt);
    detail::newton_polish(obj, st, lb_lo, lb_hi, opt, 20);
  }

  TlsParams p;
  p.mu = obj.mu(st.theta);
  p.sigma = std::exp(st.theta[1]);
  p.beta = std::exp(st.theta[2]);
  p.loglik = st.value * static_cast<double>(data.size());
  p.iterations = st.iterations;
  p.gradient_norm = detail::norm_free(st.grad, detail::free_coords(st, lb_lo, lb_hi));
  p.converged = p.gradient_norm <= opt.gradient_tolerance;
  p.effectively_normal = st.theta[2] >= lb_hi;
  if (p.effectively_normal) p.beta = opt.beta_cap;
  return p;
}

/// Total log-likelihood of the sample under the given parameters.
inline double tls_loglik(std::span<const double> data, double mu, double sigma, double beta) {
  check_tls(sigma, beta);
  double s = 0.0;
  for (double x : data) s += tls_logpdf(x, mu, sigma, beta);
  return s;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

enum class BinRule { freedman_diaconis, sturges, fixed };

struct BinSpec {
  BinRule rule = BinRule::freedman_diaconis;
  std::size_t bins = 0;  // for BinRule::fixed
  std::size_t max_bins = 1000;
};

struct DensityEstimate {
  std::vector<double> edges;      // size bins + 1
  std::vector<double> densities;  // size bins
  std::size_t sample_count = 0;

  std::size_t bins() const noexcept { return densities.size(); }
  double center(std::size_t k) const { return 0.5 * (edges[k] + edges[k + 1]); }
  double width(std::size_t k) const { return edges[k + 1] - edges[k]; }
};

/// Equal-width histogram normalized to unit area over [min, max].
inline DensityEstimate empirical_density(std::span<const double> data, BinSpec spec = {}) {
  if (data.empty()) throw degenerate_error("empirical_density: empty sample");
  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const std::size_t n = sorted.size();
  DensityEstimate out;
  out.sample_count = n;
  if (lo == hi) {
    out.edges = {lo - 0.5, lo + 0.5};
    out.densities = {1.0};
    return out;
  }
  auto sturges = [&] { return static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n)))) + 1; };
  std::size_t bins = 0;
  switch (spec.rule) {
    case BinRule::fixed:
      if (spec.bins == 0) throw domain_error("empirical_density: fixed rule needs bins > 0");
      bins = spec.bins;
      break;
    case BinRule::sturges: bins = sturges(); break;
    case BinRule::freedman_diaconis: {
      const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
      const double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
      bins = width > 0.0 ? static_cast<std::size_t>(std::ceil((hi - lo) / width)) : sturges();
      break;
    }
  }
  bins = std::clamp<std::size_t>(bins, 1, std::max<std::size_t>(spec.max_bins, 1));
  if (spec.rule == BinRule::fixed) bins = spec.bins;
  const double width = (hi - lo) / static_cast<double>(bins);
  out.edges.resize(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) out.edges[k] = lo + width * static_cast<double>(k);
  out.edges[bins] = hi;
  std::vector<std::size_t> counts(bins, 0);
  for (double x : sorted) {
    auto k = static_cast<std::size_t>((x - lo) / width);
    ++counts[std::min(k, bins - 1)];
  }
  out.densities.resize(bins);
  for (std::size_t k = 0; k < bins; ++k)
    out.densities[k] = static_cast<double>(counts[k]) / (static_cast<double>(n) * out.width(k));
  return out;
}

// ---------------------------------------------------------------------------

enum class VectorSide { left, right };

/// All N² entries of U (left) or V (right), row-major.
inline std::vector<double> collect_entries(const SvdResult& d, VectorSide side) {
  const Matrix& m = side == VectorSide::left ? d.u : d.v;
  return {m.values().begin(), m.values().end()};
}

}  // namespace impactlab
