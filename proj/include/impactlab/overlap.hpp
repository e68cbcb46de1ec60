#pragma once

// Overlap of latent factors: row-normalized left singular vectors and their
// products C = ÃᵀB̃, plus randomized response matrices with matched moments
// as a null model.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "impactlab/error.hpp"
#include "impactlab/matrix.hpp"
#include "impactlab/svd.hpp"

namespace impactlab {

enum class OverlapKind : std::uint8_t { mm, ss, ms };

inline std::string to_string(OverlapKind k) {
  switch (k) {
    case OverlapKind::mm: return "mm";
    case OverlapKind::ss: return "ss";
    case OverlapKind::ms: return "ms";
  }
  return "?";
}

inline std::optional<OverlapKind> parse_overlap_kind(std::string_view s) {
  if (s == "mm") return OverlapKind::mm;
  if (s == "ss") return OverlapKind::ss;
  if (s == "ms") return OverlapKind::ms;
  return std::nullopt;
}

/// Rows indexed by stock, columns by factor; every row has mean 0 and
/// population standard deviation 1.
struct NormalizedFactorMatrix {
  Matrix values;
};

struct OverlapMatrix {
  Matrix c;
  OverlapKind kind = OverlapKind::mm;
};

/// Row-wise z-score of U over the factor index.
inline NormalizedFactorMatrix normalize_factors(const Matrix& u) {
  NormalizedFactorMatrix out{Matrix(u.rows(), u.cols())};
  if (u.cols() < 2) throw degenerate_error("normalize_factors: need at least 2 factors");
  for (std::size_t i = 0; i < u.rows(); ++i) {
    auto row = u.row(i);
    const double mu = mean(row);
    const double sd = population_std(row, mu);
    if (!(sd > 0.0)) throw degenerate_error("normalize_factors: constant row " + std::to_string(i));
    auto dst = out.values.row(i);
    for (std::size_t n = 0; n < row.size(); ++n) dst[n] = (row[n] - mu) / sd;
  }
  return out;
}

/// C = AᵀB
inline OverlapMatrix overlap_matrix(const NormalizedFactorMatrix& a, const NormalizedFactorMatrix& b,
                                    OverlapKind kind) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw incompatible_error("overlap_matrix: dimension mismatch");
  return {transpose_times(a.values, b.values), kind};
}

inline SvdResult decompose_overlap(const OverlapMatrix& c) { return svd(c.c); }

// ---------------------------------------------------------------------------
// Null model
// ---------------------------------------------------------------------------

enum class NullFamily : std::uint8_t { gaussian, uniform, permutation };

inline std::string to_string(NullFamily f) {
  switch (f) {
    case NullFamily::gaussian: return "gaussian";
    case NullFamily::uniform: return "uniform";
    case NullFamily::permutation: return "permutation";
  }
  return "?";
}

inline std::optional<NullFamily> parse_null_family(std::string_view s) {
  if (s == "gaussian") return NullFamily::gaussian;
  if (s == "uniform") return NullFamily::uniform;
  if (s == "permutation") return NullFamily::permutation;
  return std::nullopt;
}

/// Replicate seed k of a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t k) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

/// i.i.d. entries with the global mean and population std of `r`.
inline Matrix random_response(const Matrix& r, std::uint64_t seed,
                              NullFamily family = NullFamily::gaussian) {
  if (!all_finite(r)) throw domain_error("random_response: non-finite entry");
  if (r.empty()) return r;
  const double mu = mean(r.values());
  const double sd = population_std(r.values(), mu);
  std::mt19937_64 rng(seed);
  Matrix out(r.rows(), r.cols());
  switch (family) {
    case NullFamily::gaussian: {
      std::normal_distribution<double> dist(mu, sd);
      for (auto& v : out.values()) v = dist(rng);
      break;
    }
    case NullFamily::uniform: {
      const double half = sd * std::sqrt(3.0);
      std::uniform_real_distribution<double> dist(mu - half, mu + half);
      for (auto& v : out.values()) v = dist(rng);
      break;
    }
    case NullFamily::permutation: {
      std::vector<double> vals(r.values().begin(), r.values().end());
      std::shuffle(vals.begin(), vals.end(), rng);
      std::copy(vals.begin(), vals.end(), out.values().begin());
      break;
    }
  }
  return out;
}

struct OverlapSet {
  OverlapMatrix mm, ss, ms;
};

/// R_m, R_s → SVD → normalized left vectors → C_mm, C_ss, C_ms.
inline OverlapSet overlap_pipeline(const Matrix& r_m, const Matrix& r_s) {
  const auto um = normalize_factors(svd(r_m).u);
  const auto us = normalize_factors(svd(r_s).u);
  return {overlap_matrix(um, um, OverlapKind::mm), overlap_matrix(us, us, OverlapKind::ss),
          overlap_matrix(um, us, OverlapKind::ms)};
}

/// The same pipeline on randomized R_m and R_s (independent sub-seeds).
inline OverlapSet null_overlap_pipeline(const Matrix& r_m, const Matrix& r_s, std::uint64_t seed,
                                        NullFamily family = NullFamily::gaussian) {
  return overlap_pipeline(random_response(r_m, derive_seed(seed, 0), family),
                          random_response(r_s, derive_seed(seed, 1), family));
}

}  // namespace impactlab
