#pragma once

// Seeded synthetic order flow with planted impact.
//
// Each stock keeps a reference price. Trades arrive as a Poisson process
// (optionally in same-millisecond bursts) and execute against the resting
// best quote; a trade of j with sign ε adds impact_ticks·g_ij·ε to the
// pending shift of every stock i. Quote refreshes arrive as an independent
// Poisson process per stock and re-post the best bid/ask around the shifted
// reference, so the planted impact shows up at the next quote change.
// Spreads are drawn per refresh and widen with the stock's own traded
// volume since its previous refresh.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "impactlab/classify.hpp"
#include "impactlab/error.hpp"
#include "impactlab/kv.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/matrix.hpp"

namespace impactlab {

struct MarketConfig {
  std::vector<std::string> symbols;
  Timestamp session_ms = 3'600'000;
  Matrix impact;                     // g, rows = responding stock, cols = trading stock
  std::vector<double> trade_rate;    // trade arrivals per second, per stock
  std::vector<double> quote_rate;    // quote refreshes per second, per stock
  double volume_log_mu = 4.6;        // log-normal trade volume
  double volume_log_sigma = 1.0;
  double burst_prob = 0.0;           // chance an arrival is a burst
  int burst_size = 2;                // trades per burst, same millisecond
  double sign_autocorr = 0.0;        // lag-1 autocorrelation of trade signs
  double impact_ticks = 10.0;        // ticks per unit of g
  double noise_ticks = 2.0;          // reference price noise per refresh
  double spread_impact_ticks = 1.0;  // spread widening per median volume traded
  Price spread_min = 1;
  Price spread_max = 4;
  Price base_price = 100'000;
  double single_fraction_target = 0.65;
  std::uint64_t seed = 1;

  std::size_t n_stocks() const noexcept { return symbols.size(); }

  void validate() const {
    const std::size_t n = n_stocks();
    if (n == 0) throw config_error("market: no stocks");
    if (session_ms <= 0) throw config_error("market: session_ms must be > 0");
    if (impact.rows() != n || impact.cols() != n) throw config_error("market: impact must be N×N");
    if (!all_finite(impact)) throw config_error("market: impact must be finite");
    if (trade_rate.size() != n || quote_rate.size() != n)
      throw config_error("market: one trade and quote rate per stock required");
    for (double r : trade_rate)
      if (!(r > 0.0) || !std::isfinite(r)) throw config_error("market: trade rates must be > 0");
    for (double r : quote_rate)
      if (!(r > 0.0) || !std::isfinite(r)) throw config_error("market: quote rates must be > 0");
    if (!(burst_prob >= 0.0 && burst_prob <= 1.0)) throw config_error("market: burst_prob ∉ [0, 1]");
    if (burst_size < 2) throw config_error("market: burst_size must be >= 2");
    if (!(sign_autocorr > -1.0 && sign_autocorr < 1.0))
      throw config_error("market: sign_autocorr ∉ (-1, 1)");
    if (!(single_fraction_target >= 0.0 && single_fraction_target <= 1.0))
      throw config_error("market: single_fraction_target ∉ [0, 1]");
    if (spread_min < 1 || spread_max < spread_min) throw config_error("market: bad spread range");
    if (!(volume_log_sigma >= 0.0)) throw config_error("market: volume_log_sigma must be >= 0");
    if (!(impact_ticks >= 0.0) || !(noise_ticks >= 0.0) || !(spread_impact_ticks >= 0.0))
      throw config_error("market: tick scales must be >= 0");
    if (base_price < 1000) throw config_error("market: base_price must be >= 1000 ticks");
    for (const auto& s : symbols)
      if (!detail::valid_symbol(s)) throw config_error("market: bad symbol '" + s + "'");
  }

  /// N stocks named S01, S02, ... with uniform rates and zero impact.
  static MarketConfig uniform(std::size_t n, double trade_rate, double quote_rate) {
    MarketConfig c;
    for (std::size_t k = 0; k < n; ++k) {
      std::ostringstream s;
      s << 'S' << (k + 1 < 10 ? "0" : "") << (k + 1);
      c.symbols.push_back(s.str());
    }
    c.impact = Matrix(n, n);
    c.trade_rate.assign(n, trade_rate);
    c.quote_rate.assign(n, quote_rate);
    return c;
  }
};

/// Diagonal `self_impact`, off-diagonal N(0, cross_scale²) from `seed`.
inline Matrix planted_impact(std::size_t n, double self_impact, double cross_scale,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = i == j ? self_impact : cross_scale * z(rng);
  return g;
}

namespace detail {

inline constexpr Volume kQuoteVolume = 1'000'000'000;

struct StockState {
  double ref = 0.0;
  double pending_shift = 0.0;
  double pending_spread = 0.0;
  OrderId bid_id = 0, ask_id = 0;
  Price bid = 0, ask = 0;
  Volume bid_left = 0, ask_left = 0;
  int last_sign = 0;
};

struct Arrival {
  double t;  // seconds
  std::uint32_t stock;
  bool trade;
  bool operator>(const Arrival& o) const {
    if (t != o.t) return t > o.t;
    if (trade != o.trade) return trade;  // refreshes first on exact ties
    return stock > o.stock;
  }
};

}  // namespace detail

/// Event stream for one session; identical config gives a bit-identical stream.
inline std::vector<OrderEvent> generate(const MarketConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_stocks();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::lognormal_distribution<double> volume_dist(cfg.volume_log_mu, cfg.volume_log_sigma);
  std::uniform_int_distribution<Price> spread_dist(cfg.spread_min, cfg.spread_max);
  const double median_volume = std::exp(cfg.volume_log_mu);
  const double stay = 0.5 * (1.0 + cfg.sign_autocorr);
  const double session_s = static_cast<double>(cfg.session_ms) / 1000.0;

  std::vector<OrderEvent> out;
  std::vector<detail::StockState> st(n);
  OrderId next_id = 1;

  auto post = [&](std::size_t i, Timestamp ts, Price spread) {
    auto& s = st[i];
    Price bid = std::max<Price>(1, std::llround(s.ref - 0.5 * static_cast<double>(spread)));
    Price ask = bid + spread;
    if (bid == s.bid && ask == s.ask) return;
    const std::string& sym = cfg.symbols[i];
    if (s.bid_id) out.push_back({ts, sym, EventKind::del, Side::bid, s.bid, s.bid_left, s.bid_id});
    if (s.ask_id) out.push_back({ts, sym, EventKind::del, Side::ask, s.ask, s.ask_left, s.ask_id});
    s.bid = bid;
    s.ask = ask;
    s.bid_id = next_id++;
    s.ask_id = next_id++;
    s.bid_left = s.ask_left = detail::kQuoteVolume;
    out.push_back({ts, sym, EventKind::add, Side::bid, bid, s.bid_left, s.bid_id});
    out.push_back({ts, sym, EventKind::add, Side::ask, ask, s.ask_left, s.ask_id});
  };

  std::priority_queue<detail::Arrival, std::vector<detail::Arrival>, std::greater<>> queue;
  for (std::size_t i = 0; i < n; ++i) {
    st[i].ref = static_cast<double>(cfg.base_price) * (1.0 + 0.1 * static_cast<double>(i));
    post(i, 0, spread_dist(rng));
    std::exponential_distribution<double> tq(cfg.quote_rate[i]), tt(cfg.trade_rate[i]);
    queue.push({tq(rng), static_cast<std::uint32_t>(i), false});
    queue.push({tt(rng), static_cast<std::uint32_t>(i), true});
  }

  while (!queue.empty()) {
    const detail::Arrival a = queue.top();
    queue.pop();
    if (a.t >= session_s) continue;
    const Timestamp ts = static_cast<Timestamp>(std::floor(a.t * 1000.0));
    const std::size_t k = a.stock;
    auto& s = st[k];
    if (a.trade) {
      const int size = unit(rng) < cfg.burst_prob ? cfg.burst_size : 1;
      for (int b = 0; b < size; ++b) {
        int sign = s.last_sign == 0 ? (unit(rng) < 0.5 ? 1 : -1)
                                    : (unit(rng) < stay ? s.last_sign : -s.last_sign);
        s.last_sign = sign;
        Volume v = static_cast<Volume>(std::max(1.0, std::round(volume_dist(rng))));
        Volume& left = sign > 0 ? s.ask_left : s.bid_left;
        v = std::min(v, left - 1);
        left -= v;
        out.push_back({ts, cfg.symbols[k], EventKind::execute, sign > 0 ? Side::ask : Side::bid,
                       sign > 0 ? s.ask : s.bid, v, sign > 0 ? s.ask_id : s.bid_id});
        for (std::size_t i = 0; i < n; ++i)
          st[i].pending_shift += cfg.impact_ticks * cfg.impact(i, k) * sign;
        s.pending_spread += cfg.spread_impact_ticks * static_cast<double>(v) / median_volume;
      }
      std::exponential_distribution<double> next(cfg.trade_rate[k]);
      queue.push({a.t + next(rng), a.stock, true});
    } else {
      s.ref += s.pending_shift + cfg.noise_ticks * gauss(rng);
      s.ref = std::max(s.ref, 0.5 * static_cast<double>(cfg.base_price));
      s.pending_shift = 0.0;
      Price extra = std::min<Price>(std::llround(s.pending_spread), 20);
      s.pending_spread = 0.0;
      post(k, ts, spread_dist(rng) + extra);
      std::exponential_distribution<double> next(cfg.quote_rate[k]);
      queue.push({a.t + next(rng), a.stock, false});
    }
  }
  return out;
}

/// Mean over stock pairs of the measured single-trade fraction.
inline double measure_single_fraction(const MarketConfig& cfg) {
  const auto events = generate(cfg);
  const auto stocks = replay(events);
  auto f = mean_single_fraction(pair_weights(stocks));
  if (!f) throw calibration_error("no paired trades in generated session");
  return *f;
}

struct CalibrationResult {
  MarketConfig config;
  double measured = 0.0;
  int evaluations = 0;
};

/// Tunes burst_prob so the measured single-trade fraction hits
/// cfg.single_fraction_target within `tolerance`. Without bursts the
/// fraction is at its maximum, so a target above it is unreachable.
inline CalibrationResult calibrate_single_fraction(MarketConfig cfg, double tolerance = 0.005,
                                                   double accept = 0.02, int max_evals = 24) {
  cfg.validate();
  const double target = cfg.single_fraction_target;
  CalibrationResult best;
  double best_err = std::numeric_limits<double>::infinity();
  auto eval = [&](double q) {
    cfg.burst_prob = q;
    const double f = measure_single_fraction(cfg);
    ++best.evaluations;
    if (std::abs(f - target) < best_err) {
      best_err = std::abs(f - target);
      best.config = cfg;
      best.measured = f;
    }
    return f;
  };

  const double f0 = eval(0.0);
  if (f0 < target - accept)
    throw calibration_error("single fraction " + std::to_string(target) +
                            " unreachable: without bursts the fraction is " + std::to_string(f0));
  if (f0 <= target + tolerance) return best;

  // bursts of size b turn a share b·q/(1 - q + b·q) of trades multiple
  const double b = cfg.burst_size;
  double lo = 0.0, hi = 1.0;
  double q = std::clamp((f0 - target) / (f0 + (b - 1.0) * target), 0.0, 1.0);
  while (best.evaluations < max_evals) {
    const double f = eval(q);
    if (std::abs(f - target) <= tolerance) break;
    (f > target ? lo : hi) = q;
    q = 0.5 * (lo + hi);
  }
  if (best_err > accept)
    throw calibration_error("single fraction calibration missed target by " + std::to_string(best_err));
  return best;
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> parse_rates(const std::string& s, std::size_t n, const char* key,
                                       std::vector<std::string>& errors) {
  auto items = split_list(s);
  std::vector<double> out;
  for (const auto& it : items) {
    auto v = parse_number<double>(it);
    if (!v) {
      errors.push_back(std::string(key) + ": not a number '" + it + "'");
      return {};
    }
    out.push_back(*v);
  }
  if (out.size() == 1) out.assign(n, out.front());
  if (out.size() != n) errors.push_back(std::string(key) + ": expected 1 or N values");
  return out;
}

}  // namespace detail

/// Reads a market config from `key = value` text. Collects every problem
/// before throwing one config_error.
inline MarketConfig parse_market_config(std::string_view text) {
  const KeyValues kv = parse_kv(text);
  std::vector<std::string> errors = kv.errors;
  static const std::vector<std::string> known = {
      "n_stocks", "symbols", "session_ms", "seed", "trade_rate", "quote_rate",
      "volume_log_mu", "volume_log_sigma", "burst_prob", "burst_size", "sign_autocorr",
      "impact_ticks", "noise_ticks", "spread_impact_ticks", "spread_min", "spread_max",
      "base_price", "single_fraction_target", "impact"};
  for (const auto& [k, v] : kv.values)
    if (std::find(known.begin(), known.end(), k) == known.end()) errors.push_back("unknown key '" + k + "'");

  std::size_t n = 0;
  MarketConfig c;
  if (auto s = kv.get("symbols")) {
    c.symbols = split_list(*s);
    n = c.symbols.size();
  }
  if (auto s = kv.get("n_stocks")) {
    auto v = parse_number<std::size_t>(*s);
    if (!v || *v == 0)
      errors.push_back("n_stocks: positive integer expected");
    else if (n && *v != n)
      errors.push_back("n_stocks disagrees with symbols");
    else if (!n) {
      n = *v;
      c.symbols = MarketConfig::uniform(n, 1, 1).symbols;
    }
  }
  if (n == 0) {
    errors.push_back("n_stocks or symbols required");
    throw config_error(errors.front());
  }

  auto number = [&](const char* key, auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    if (auto s = kv.get(key)) {
      if (auto v = parse_number<T>(*s))
        field = *v;
      else
        errors.push_back(std::string(key) + ": bad value '" + *s + "'");
    }
  };
  number("session_ms", c.session_ms);
  number("seed", c.seed);
  number("volume_log_mu", c.volume_log_mu);
  number("volume_log_sigma", c.volume_log_sigma);
  number("burst_prob", c.burst_prob);
  number("burst_size", c.burst_size);
  number("sign_autocorr", c.sign_autocorr);
  number("impact_ticks", c.impact_ticks);
  number("noise_ticks", c.noise_ticks);
  number("spread_impact_ticks", c.spread_impact_ticks);
  number("spread_min", c.spread_min);
  number("spread_max", c.spread_max);
  number("base_price", c.base_price);
  number("single_fraction_target", c.single_fraction_target);
  c.trade_rate = detail::parse_rates(kv.get("trade_rate") ? *kv.get("trade_rate") : "1.0", n,
                                     "trade_rate", errors);
  c.quote_rate = detail::parse_rates(kv.get("quote_rate") ? *kv.get("quote_rate") : "5.0", n,
                                     "quote_rate", errors);

  c.impact = Matrix(n, n);
  if (auto s = kv.get("impact")) {
    std::istringstream in(*s);
    std::string mode;
    in >> mode;
    std::vector<double> args;
    std::string tok;
    while (in >> tok) {
      for (auto& piece : split_list(tok)) {
        if (auto v = parse_number<double>(piece))
          args.push_back(*v);
        else
          errors.push_back("impact: not a number '" + piece + "'");
      }
    }
    if (mode == "zero" && args.empty()) {
    } else if (mode == "diagonal" && args.size() == 1) {
      for (std::size_t i = 0; i < n; ++i) c.impact(i, i) = args[0];
    } else if (mode == "planted" && args.size() == 2) {
      c.impact = planted_impact(n, args[0], args[1], c.seed ^ 0x9e3779b97f4a7c15ULL);
    } else if (mode == "values" && args.size() == n * n) {
      std::copy(args.begin(), args.end(), c.impact.values().begin());
    } else {
      errors.push_back("impact: expected 'zero', 'diagonal <g>', 'planted <self> <cross>' or "
                       "'values' with N*N numbers");
    }
  }
  if (errors.empty()) {
    try {
      c.validate();
    } catch (const config_error& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw config_error(msg);
  }
  return c;
}

/// Lag-1 autocorrelation of a ±1 sign series.
inline double sign_autocorrelation(std::span<const TradeEvent> trades) {
  if (trades.size() < 3) return 0.0;
  std::vector<double> s;
  s.reserve(trades.size());
  for (const auto& t : trades) s.push_back(t.sign);
  const double mu = mean(s);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    den += (s[k] - mu) * (s[k] - mu);
    if (k + 1 < s.size()) num += (s[k] - mu) * (s[k + 1] - mu);
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace impactlab
