#pragma once

// Generalized response matrices
//
//   R[i][j] = < (x_i(following) - x_i(previous)) * y_j >   over trades of j
//
// with x the normalized midpoint or spread of stock i and y the normalized
// trade sign, volume or signed volume of stock j.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impactlab/classify.hpp"
#include "impactlab/error.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/matrix.hpp"

namespace impactlab {

enum class XKind : std::uint8_t { midpoint, spread };
enum class YKind : std::uint8_t { sign, volume, signed_volume };
enum class Subset : std::uint8_t { all, single, multiple, weighted };

inline constexpr XKind kAllXKinds[] = {XKind::midpoint, XKind::spread};
inline constexpr YKind kAllYKinds[] = {YKind::sign, YKind::volume, YKind::signed_volume};
inline constexpr Subset kAllSubsets[] = {Subset::all, Subset::single, Subset::multiple,
                                         Subset::weighted};

inline std::string to_string(XKind x) { return x == XKind::midpoint ? "m" : "s"; }
inline std::string to_string(YKind y) {
  switch (y) {
    case YKind::sign: return "sign";
    case YKind::volume: return "vol";
    case YKind::signed_volume: return "svol";
  }
  return "?";
}
inline std::string to_string(Subset s) {
  switch (s) {
    case Subset::all: return "all";
    case Subset::single: return "single";
    case Subset::multiple: return "multiple";
    case Subset::weighted: return "weighted";
  }
  return "?";
}

inline std::optional<XKind> parse_x_kind(std::string_view s) {
  if (s == "m") return XKind::midpoint;
  if (s == "s") return XKind::spread;
  return std::nullopt;
}
inline std::optional<YKind> parse_y_kind(std::string_view s) {
  if (s == "sign") return YKind::sign;
  if (s == "vol") return YKind::volume;
  if (s == "svol") return YKind::signed_volume;
  return std::nullopt;
}
inline std::optional<Subset> parse_subset(std::string_view s) {
  if (s == "all") return Subset::all;
  if (s == "single") return Subset::single;
  if (s == "multiple") return Subset::multiple;
  if (s == "weighted") return Subset::weighted;
  return std::nullopt;
}

struct ResponseKey {
  XKind x = XKind::midpoint;
  YKind y = YKind::sign;
  Subset subset = Subset::all;

  std::string name() const { return to_string(x) + "_" + to_string(y) + "_" + to_string(subset); }
  auto operator<=>(const ResponseKey&) const = default;
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormalizedSeries {
  std::vector<double> values;
  double source_mean = 0.0;
  double source_std = 0.0;
};

/// z-score with population standard deviation.
inline NormalizedSeries normalize(std::span<const double> z) {
  if (z.size() < 2) throw degenerate_error("normalize: fewer than 2 values");
  NormalizedSeries out;
  out.source_mean = mean(z);
  out.source_std = population_std(z, out.source_mean);
  if (!(out.source_std > 0.0)) throw degenerate_error("normalize: constant series");
  out.values.resize(z.size());
  for (std::size_t k = 0; k < z.size(); ++k)
    out.values[k] = (z[k] - out.source_mean) / out.source_std;
  return out;
}

/// Elementwise product of normalized sign and normalized volume.
inline std::vector<double> signed_volume(const NormalizedSeries& sign, const NormalizedSeries& volume) {
  if (sign.values.size() != volume.values.size())
    throw alignment_error("signed_volume: sign and volume series differ in length");
  std::vector<double> out(sign.values.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = sign.values[k] * volume.values[k];
  return out;
}

struct ResponseOptions {
  // Re-normalize the signed volume product before use.
  bool renormalize_signed_volume = false;
};

/// Normalized per-stock inputs for one session. A stock whose series is
/// degenerate has no value for that kind; its row or column is missing.
struct SessionSignals {
  std::vector<std::string> symbols;
  std::vector<std::optional<std::vector<double>>> midpoint, spread;
  std::vector<std::optional<std::vector<double>>> sign, volume, signed_volume;

  const std::optional<std::vector<double>>& x(XKind k, std::size_t i) const {
    return k == XKind::midpoint ? midpoint[i] : spread[i];
  }
  const std::optional<std::vector<double>>& y(YKind k, std::size_t j) const {
    switch (k) {
      case YKind::sign: return sign[j];
      case YKind::volume: return volume[j];
      default: return signed_volume[j];
    }
  }
};

inline SessionSignals session_signals(std::span<const StockSeries> stocks,
                                      const ResponseOptions& opt = {}) {
  auto try_normalize = [](const std::vector<double>& v) -> std::optional<NormalizedSeries> {
    try {
      return normalize(v);
    } catch (const degenerate_error&) {
      return std::nullopt;
    }
  };
  SessionSignals s;
  for (const auto& st : stocks) {
    s.symbols.push_back(st.symbol);
    std::vector<double> m, sp, e, v;
    m.reserve(st.quotes.size());
    sp.reserve(st.quotes.size());
    for (const auto& q : st.quotes) {
      m.push_back(q.midpoint());
      sp.push_back(static_cast<double>(q.spread()));
    }
    for (const auto& t : st.trades) {
      e.push_back(static_cast<double>(t.sign));
      v.push_back(static_cast<double>(t.volume));
    }
    auto nm = try_normalize(m);
    auto ns = try_normalize(sp);
    auto ne = try_normalize(e);
    auto nv = try_normalize(v);
    s.midpoint.push_back(nm ? std::optional(std::move(nm->values)) : std::nullopt);
    s.spread.push_back(ns ? std::optional(std::move(ns->values)) : std::nullopt);
    if (ne && nv) {
      auto sv = signed_volume(*ne, *nv);
      if (opt.renormalize_signed_volume) {
        auto r = try_normalize(sv);
        s.signed_volume.push_back(r ? std::optional(std::move(r->values)) : std::nullopt);
      } else {
        s.signed_volume.push_back(std::move(sv));
      }
    } else {
      s.signed_volume.push_back(std::nullopt);
    }
    s.sign.push_back(ne ? std::optional(std::move(ne->values)) : std::nullopt);
    s.volume.push_back(nv ? std::optional(std::move(nv->values)) : std::nullopt);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Response matrices
// ---------------------------------------------------------------------------

struct ResponseMatrix {
  std::vector<std::string> symbols;
  ResponseKey key;
  Matrix values;                      // 0 where missing
  std::vector<std::uint64_t> counts;  // row-major, 0 marks a missing entry
  std::size_t one_sided = 0;          // weighted entries taken from a single subset

  std::size_t size() const noexcept { return symbols.size(); }
  std::uint64_t count(std::size_t i, std::size_t j) const { return counts[i * size() + j]; }
  bool missing(std::size_t i, std::size_t j) const { return count(i, j) == 0; }
  std::size_t missing_count() const {
    std::size_t n = 0;
    for (auto c : counts) n += (c == 0);
    return n;
  }

  static ResponseMatrix empty(std::vector<std::string> symbols, ResponseKey key) {
    ResponseMatrix r;
    const std::size_t n = symbols.size();
    r.symbols = std::move(symbols);
    r.key = key;
    r.values = Matrix(n, n);
    r.counts.assign(n * n, 0);
    return r;
  }
};

struct ResponseSum {
  double sum = 0.0;
  std::uint64_t count = 0;

  std::optional<double> mean() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

inline bool in_subset(TradeLabel label, Subset s) {
  switch (s) {
    case Subset::all: return true;
    case Subset::single: return label == TradeLabel::single;
    case Subset::multiple: return label == TradeLabel::multiple;
    case Subset::weighted: break;
  }
  throw domain_error("weighted responses are interpolated, not averaged");
}

/// Sum and count of (x[next] - x[prev]) * y[trade] over the selected pairs.
inline ResponseSum pair_response(std::span<const double> x_i, const LabeledPairs& pairs,
                                 std::span<const double> y_j, Subset subset) {
  ResponseSum r;
  for (const auto& p : pairs.pairs) {
    if (!in_subset(p.label, subset)) continue;
    r.sum += (x_i[p.next] - x_i[p.prev]) * y_j[p.trade];
    ++r.count;
  }
  return r;
}

namespace detail {

template <typename WeightFn>
ResponseMatrix interpolate(const ResponseMatrix& st, const ResponseMatrix& mt, WeightFn weight) {
  if (st.key.x != mt.key.x || st.key.y != mt.key.y)
    throw incompatible_error("weighted_response: x/y kinds differ");
  if (st.symbols != mt.symbols) throw incompatible_error("weighted_response: symbol sets differ");
  ResponseMatrix out = ResponseMatrix::empty(st.symbols, {st.key.x, st.key.y, Subset::weighted});
  const std::size_t n = st.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool has_st = !st.missing(i, j);
      const bool has_mt = !mt.missing(i, j);
      const std::size_t k = i * n + j;
      out.counts[k] = st.counts[k] + mt.counts[k];
      if (has_st && has_mt) {
        std::optional<double> wij = weight(i, j);
        if (!wij) throw incompatible_error("weighted_response: weight missing for populated pair");
        out.values(i, j) = *wij * st.values(i, j) + (1.0 - *wij) * mt.values(i, j);
      } else if (has_st) {
        out.values(i, j) = st.values(i, j);
        ++out.one_sided;
      } else if (has_mt) {
        out.values(i, j) = mt.values(i, j);
        ++out.one_sided;
      }
    }
  }
  return out;
}

}  // namespace detail

/// R_wt = w R_st + (1 - w) R_mt. When only one of the two
/// inputs is present it is used alone and counted in `one_sided`.
inline ResponseMatrix weighted_response(const ResponseMatrix& st, const ResponseMatrix& mt,
                                        const PairWeights& w) {
  if (w.symbols != st.symbols) throw incompatible_error("weighted_response: weights do not match");
  return detail::interpolate(st, mt, [&](std::size_t i, std::size_t j) { return w.weight(i, j); });
}

/// Same, with weights given as a matrix and a missing mask (row-major).
inline ResponseMatrix weighted_response(const ResponseMatrix& st, const ResponseMatrix& mt,
                                        const Matrix& w, const std::vector<bool>& w_missing) {
  const std::size_t n = st.size();
  if (w.rows() != n || w.cols() != n || w_missing.size() != n * n)
    throw incompatible_error("weighted_response: weights do not match");
  return detail::interpolate(st, mt, [&](std::size_t i, std::size_t j) -> std::optional<double> {
    if (w_missing[i * n + j]) return std::nullopt;
    return w(i, j);
  });
}

struct SessionResponses {
  PairWeights weights;
  std::map<ResponseKey, ResponseMatrix> matrices;
};

/// All requested matrices for one session, one pairing sweep per (i, j).
/// Throws empty_result_error if a requested matrix has no populated entry.
inline SessionResponses compute_responses(std::span<const StockSeries> stocks,
                                          std::span<const ResponseKey> keys,
                                          const ResponseOptions& opt = {}) {
  const SessionSignals sig = session_signals(stocks, opt);
  const std::size_t n = stocks.size();

  // Weighted matrices need their single and multiple inputs.
  std::vector<ResponseKey> averaged;
  for (const auto& k : keys) {
    if (k.subset == Subset::weighted) {
      averaged.push_back({k.x, k.y, Subset::single});
      averaged.push_back({k.x, k.y, Subset::multiple});
    } else {
      averaged.push_back(k);
    }
  }
  std::sort(averaged.begin(), averaged.end());
  averaged.erase(std::unique(averaged.begin(), averaged.end()), averaged.end());

  SessionResponses out;
  out.weights.symbols = sig.symbols;
  out.weights.counts.resize(n * n);
  std::map<ResponseKey, ResponseMatrix> work;
  for (const auto& k : averaged) work.emplace(k, ResponseMatrix::empty(sig.symbols, k));

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const LabeledPairs lp = classify_pair(stocks[i].quotes, stocks[j].trades);
      out.weights.counts[i * n + j] = lp.counts;
      for (auto& [k, m] : work) {
        const auto& x = sig.x(k.x, i);
        const auto& y = sig.y(k.y, j);
        if (!x || !y) continue;
        const ResponseSum r = pair_response(*x, lp, *y, k.subset);
        if (auto v = r.mean()) {
          m.values(i, j) = *v;
          m.counts[i * n + j] = r.count;
        }
      }
    }
  }

  for (const auto& k : keys) {
    ResponseMatrix m = k.subset == Subset::weighted
                           ? weighted_response(work.at({k.x, k.y, Subset::single}),
                                               work.at({k.x, k.y, Subset::multiple}), out.weights)
                           : work.at(k);
    if (n > 0 && m.missing_count() == n * n)
      throw empty_result_error("response " + k.name() + ": no populated entry");
    out.matrices.emplace(k, std::move(m));
  }
  return out;
}

inline ResponseMatrix response_matrix(std::span<const StockSeries> stocks, ResponseKey key,
                                      const ResponseOptions& opt = {}) {
  const ResponseKey keys[] = {key};
  return std::move(compute_responses(stocks, keys, opt).matrices.at(key));
}

/// Equal-weight average of daily matrices over the days where an entry is
/// present; counts are summed.
inline ResponseMatrix average_days(std::span<const ResponseMatrix> days) {
  if (days.empty()) throw empty_result_error("average_days: no days");
  ResponseMatrix out = ResponseMatrix::empty(days.front().symbols, days.front().key);
  const std::size_t n = out.size();
  std::vector<std::size_t> present(n * n, 0);
  for (const auto& d : days) {
    if (d.symbols != out.symbols || !(d.key == out.key))
      throw incompatible_error("average_days: matrices differ in symbols or kind");
    out.one_sided += d.one_sided;
    for (std::size_t k = 0; k < n * n; ++k) {
      if (d.counts[k] == 0) continue;
      out.values.values()[k] += d.values.values()[k];
      out.counts[k] += d.counts[k];
      ++present[k];
    }
  }
  for (std::size_t k = 0; k < n * n; ++k)
    if (present[k] > 0) out.values.values()[k] /= static_cast<double>(present[k]);
  return out;
}

}  // namespace impactlab
