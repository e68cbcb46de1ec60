#pragma once

// Bracketing of trades of stock j by quotes of stock i, and the
// single/multiple trade labels derived from shared brackets.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impactlab/error.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/matrix.hpp"

namespace impactlab {

enum class TradeLabel : std::uint8_t { single, multiple };

/// A trade of j with the indices of its previous and following quote of i.
/// A quote stamped at the trade's millisecond counts as the following quote.
struct PairedTrade {
  std::size_t trade = 0;  // index into the trade series of j
  std::size_t prev = 0;   // index into the quote series of i, ts < trade ts
  std::size_t next = 0;   // index into the quote series of i, ts >= trade ts
  TradeLabel label = TradeLabel::single;

  bool operator==(const PairedTrade&) const = default;
};

struct Pairing {
  std::vector<PairedTrade> pairs;
  std::size_t dropped = 0;  // trades lacking a quote on either side
};

struct LabelCounts {
  std::size_t single = 0;
  std::size_t multiple = 0;
  std::size_t dropped = 0;

  std::size_t paired() const noexcept { return single + multiple; }
  /// Share of single trades; empty when no trade was paired.
  std::optional<double> weight() const {
    if (paired() == 0) return std::nullopt;
    return static_cast<double>(single) / static_cast<double>(paired());
  }
};

struct LabeledPairs {
  std::vector<PairedTrade> pairs;
  LabelCounts counts;
};

template <typename Series>
void require_sorted(const Series& s, const char* what) {
  for (std::size_t k = 1; k < s.size(); ++k)
    if (s[k].ts < s[k - 1].ts) throw ordering_error(std::string(what) + " not time-sorted");
}

/// Two-pointer sweep, O(n + m).
inline Pairing pair_trades(std::span<const QuoteEvent> quotes_i,
                           std::span<const TradeEvent> trades_j) {
  require_sorted(quotes_i, "quote series");
  require_sorted(trades_j, "trade series");
  Pairing out;
  out.pairs.reserve(trades_j.size());
  std::size_t q = 0;  // first quote with ts >= current trade ts
  for (std::size_t t = 0; t < trades_j.size(); ++t) {
    const Timestamp ts = trades_j[t].ts;
    while (q < quotes_i.size() && quotes_i[q].ts < ts) ++q;
    if (q == 0 || q == quotes_i.size()) {
      ++out.dropped;
      continue;
    }
    out.pairs.push_back(PairedTrade{t, q - 1, q, TradeLabel::single});
  }
  return out;
}

/// A trade is multiple iff another trade shares both its previous and its
/// following quote. Pairs arrive in trade order, so equal brackets are
/// contiguous.
inline LabeledPairs label_single_multiple(Pairing paired) {
  LabeledPairs out;
  out.pairs = std::move(paired.pairs);
  out.counts.dropped = paired.dropped;
  auto& p = out.pairs;
  std::size_t k = 0;
  while (k < p.size()) {
    std::size_t end = k + 1;
    while (end < p.size() && p[end].prev == p[k].prev && p[end].next == p[k].next) ++end;
    const TradeLabel label = (end - k >= 2) ? TradeLabel::multiple : TradeLabel::single;
    for (std::size_t m = k; m < end; ++m) p[m].label = label;
    (label == TradeLabel::multiple ? out.counts.multiple : out.counts.single) += end - k;
    k = end;
  }
  return out;
}

inline LabeledPairs classify_pair(std::span<const QuoteEvent> quotes_i,
                                  std::span<const TradeEvent> trades_j) {
  return label_single_multiple(pair_trades(quotes_i, trades_j));
}

/// w_ij = single / (single + multiple) per stock pair; rows are the quoted
/// stock i, columns the trading stock j.
struct PairWeights {
  std::vector<std::string> symbols;
  std::vector<LabelCounts> counts;  // row-major N×N

  std::size_t size() const noexcept { return symbols.size(); }
  const LabelCounts& at(std::size_t i, std::size_t j) const { return counts[i * size() + j]; }
  std::optional<double> weight(std::size_t i, std::size_t j) const { return at(i, j).weight(); }

  /// Weight matrix with missing entries set to 0 (see `missing`).
  Matrix matrix() const {
    Matrix w(size(), size());
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j) w(i, j) = weight(i, j).value_or(0.0);
    return w;
  }
  bool missing(std::size_t i, std::size_t j) const { return !weight(i, j).has_value(); }
};

/// Builds W over all ordered pairs of a session.
inline PairWeights pair_weights(std::span<const StockSeries> stocks) {
  PairWeights w;
  const std::size_t n = stocks.size();
  for (const auto& s : stocks) w.symbols.push_back(s.symbol);
  w.counts.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      w.counts[i * n + j] = classify_pair(stocks[i].quotes, stocks[j].trades).counts;
  return w;
}

/// Mean of the defined w_ij; empty when none is defined.
inline std::optional<double> mean_single_fraction(const PairWeights& w) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : w.counts) {
    if (auto v = c.weight()) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace impactlab
