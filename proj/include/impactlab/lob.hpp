#pragma once

// Order-flow events, per-stock order books and replay into best-quote and
// trade series.
//
// Text event schema (one event per LF-terminated line, UTF-8):
//
//   ts_ms,stock,kind,side,price_ticks,volume,order_id
//
//   ts_ms        signed integer, milliseconds since session open
//   stock        symbol, 1-8 characters, no ',' or whitespace
//   kind         add | cancel | delete | execute
//   side         bid | ask
//   price_ticks  integer > 0
//   volume       integer > 0. For delete it must equal the order's
//                remaining volume; for cancel/execute it is the amount
//                removed.
//   order_id     unsigned integer, unique per stock among live orders
//
// Binary framing: each record is a 4-byte little-endian length (always 34)
// followed by the same fields in the same order, little-endian:
//
//   ts_ms        int64   8 bytes
//   stock        char[8] ASCII, right-padded with spaces
//   kind         char    'A' add, 'C' cancel, 'D' delete, 'E' execute
//   side         char    'B' bid, 'S' ask
//   price_ticks  uint32  4 bytes
//   volume       uint32  4 bytes
//   order_id     uint64  8 bytes

#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "impactlab/error.hpp"

namespace impactlab {

using Timestamp = std::int64_t;  // ms since session open
using Price = std::int64_t;      // integer ticks
using Volume = std::uint64_t;    // shares
using OrderId = std::uint64_t;

enum class EventKind : char { add = 'A', cancel = 'C', del = 'D', execute = 'E' };
enum class Side : char { bid = 'B', ask = 'S' };

struct OrderEvent {
  Timestamp ts = 0;
  std::string stock;
  EventKind kind = EventKind::add;
  Side side = Side::bid;
  Price price = 0;
  Volume volume = 0;
  OrderId order_id = 0;

  bool operator==(const OrderEvent&) const = default;
};

/// Best quote after a change. The midpoint is kept doubled so half ticks stay exact.
struct QuoteEvent {
  Timestamp ts = 0;
  Price bid = 0;
  Price ask = 0;

  Price mid_x2() const noexcept { return bid + ask; }
  Price spread() const noexcept { return ask - bid; }
  double midpoint() const noexcept { return 0.5 * static_cast<double>(bid + ask); }

  bool operator==(const QuoteEvent&) const = default;
};

struct TradeEvent {
  Timestamp ts = 0;
  int sign = 0;  // +1 buyer-initiated, -1 seller-initiated
  Volume volume = 0;
  Price price = 0;

  bool operator==(const TradeEvent&) const = default;
};

struct StockSeries {
  std::string symbol;
  std::vector<QuoteEvent> quotes;
  std::vector<TradeEvent> trades;
};

/// Half-open session window [start, end).
struct Window {
  Timestamp start = std::numeric_limits<Timestamp>::min();
  Timestamp end = std::numeric_limits<Timestamp>::max();

  bool contains(Timestamp t) const noexcept { return t >= start && t < end; }
  bool unbounded() const noexcept {
    return start == std::numeric_limits<Timestamp>::min() &&
           end == std::numeric_limits<Timestamp>::max();
  }
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::add: return "add";
    case EventKind::cancel: return "cancel";
    case EventKind::del: return "delete";
    case EventKind::execute: return "execute";
  }
  return "?";
}

inline std::string_view to_string(Side s) { return s == Side::bid ? "bid" : "ask"; }

// ---------------------------------------------------------------------------
// Order book
// ---------------------------------------------------------------------------

struct Level {
  Price price = 0;
  Volume volume = 0;
  bool operator==(const Level&) const = default;
};

struct RestingOrder {
  Side side = Side::bid;
  Price price = 0;
  Volume remaining = 0;
  bool operator==(const RestingOrder&) const = default;
};

class OrderBook {
public:
  /// Applies one event. Throws integrity_error on inconsistent references,
  /// volume overdraw or a crossed book; the book is unchanged in that case.
  void apply(const OrderEvent& e) {
    if (e.volume == 0) throw integrity_error("zero volume");
    if (e.price <= 0) throw integrity_error("non-positive price");
    if (e.kind == EventKind::add) {
      add(e);
      return;
    }
    auto it = orders_.find(e.order_id);
    if (it == orders_.end())
      throw integrity_error(std::string(to_string(e.kind)) + " of unknown order " +
                            std::to_string(e.order_id));
    RestingOrder& o = it->second;
    if (o.side != e.side || o.price != e.price)
      throw integrity_error("side/price mismatch for order " + std::to_string(e.order_id));
    if (e.volume > o.remaining)
      throw integrity_error("volume exceeds remaining for order " + std::to_string(e.order_id));
    if (e.kind == EventKind::del && e.volume != o.remaining)
      throw integrity_error("delete volume differs from remaining for order " +
                            std::to_string(e.order_id));
    reduce_level(o.side, o.price, e.volume);
    o.remaining -= e.volume;
    if (o.remaining == 0) orders_.erase(it);
  }

  std::optional<Level> best_bid() const {
    if (bids_.empty()) return std::nullopt;
    return Level{bids_.begin()->first, bids_.begin()->second};
  }
  std::optional<Level> best_ask() const {
    if (asks_.empty()) return std::nullopt;
    return Level{asks_.begin()->first, asks_.begin()->second};
  }

  Volume volume_at(Side s, Price p) const {
    if (s == Side::bid) {
      auto it = bids_.find(p);
      return it == bids_.end() ? 0 : it->second;
    }
    auto it = asks_.find(p);
    return it == asks_.end() ? 0 : it->second;
  }

  const RestingOrder* find(OrderId id) const {
    auto it = orders_.find(id);
    return it == orders_.end() ? nullptr : &it->second;
  }

  std::size_t order_count() const noexcept { return orders_.size(); }
  std::size_t level_count(Side s) const noexcept {
    return s == Side::bid ? bids_.size() : asks_.size();
  }
  bool empty() const noexcept { return orders_.empty() && bids_.empty() && asks_.empty(); }

  bool operator==(const OrderBook&) const = default;

private:
  void add(const OrderEvent& e) {
    if (orders_.contains(e.order_id))
      throw integrity_error("duplicate order id " + std::to_string(e.order_id));
    if (e.side == Side::bid && !asks_.empty() && e.price >= asks_.begin()->first)
      throw integrity_error("bid at " + std::to_string(e.price) + " crosses best ask " +
                            std::to_string(asks_.begin()->first));
    if (e.side == Side::ask && !bids_.empty() && e.price <= bids_.begin()->first)
      throw integrity_error("ask at " + std::to_string(e.price) + " crosses best bid " +
                            std::to_string(bids_.begin()->first));
    orders_.emplace(e.order_id, RestingOrder{e.side, e.price, e.volume});
    if (e.side == Side::bid)
      bids_[e.price] += e.volume;
    else
      asks_[e.price] += e.volume;
  }

  void reduce_level(Side s, Price p, Volume v) {
    auto shrink = [&](auto& levels) {
      auto it = levels.find(p);
      it->second -= v;
      if (it->second == 0) levels.erase(it);
    };
    if (s == Side::bid)
      shrink(bids_);
    else
      shrink(asks_);
  }

  std::map<Price, Volume, std::greater<>> bids_;
  std::map<Price, Volume> asks_;
  std::unordered_map<OrderId, RestingOrder> orders_;
};

inline OrderBook apply_event(OrderBook book, const OrderEvent& e) {
  book.apply(e);
  return book;
}

// ---------------------------------------------------------------------------
// Text schema
// ---------------------------------------------------------------------------

inline constexpr std::string_view kEventHeader = "ts_ms,stock,kind,side,price_ticks,volume,order_id";

namespace detail {

template <typename T>
bool parse_int(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline bool valid_symbol(std::string_view s) {
  if (s.empty() || s.size() > 8) return false;
  for (char c : s)
    if (c == ',' || c == ' ' || c == '\t' || c == '\r' || c == '\n') return false;
  return true;
}

inline OrderEvent parse_event_line(std::string_view line, std::size_t lineno) {
  std::string_view f[7];
  std::size_t n = 0;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= line.size(); ++k) {
    if (k == line.size() || line[k] == ',') {
      if (n == 7) throw parse_error::at_line(lineno, "too many fields");
      f[n++] = line.substr(start, k - start);
      start = k + 1;
    }
  }
  if (n != 7) throw parse_error::at_line(lineno, "expected 7 fields, got " + std::to_string(n));

  OrderEvent e;
  if (!parse_int(f[0], e.ts)) throw parse_error::at_line(lineno, "bad ts_ms");
  if (!valid_symbol(f[1])) throw parse_error::at_line(lineno, "bad stock symbol");
  e.stock = std::string(f[1]);
  if (f[2] == "add")
    e.kind = EventKind::add;
  else if (f[2] == "cancel")
    e.kind = EventKind::cancel;
  else if (f[2] == "delete")
    e.kind = EventKind::del;
  else if (f[2] == "execute")
    e.kind = EventKind::execute;
  else
    throw parse_error::at_line(lineno, "bad kind '" + std::string(f[2]) + "'");
  if (f[3] == "bid")
    e.side = Side::bid;
  else if (f[3] == "ask")
    e.side = Side::ask;
  else
    throw parse_error::at_line(lineno, "bad side '" + std::string(f[3]) + "'");
  if (!parse_int(f[4], e.price) || e.price <= 0)
    throw parse_error::at_line(lineno, "price_ticks must be a positive integer");
  if (!parse_int(f[5], e.volume) || e.volume == 0)
    throw parse_error::at_line(lineno, "volume must be a positive integer");
  if (!parse_int(f[6], e.order_id)) throw parse_error::at_line(lineno, "bad order_id");
  return e;
}

}  // namespace detail

/// Parses the text schema. Events must be in non-decreasing timestamp order.
inline std::vector<OrderEvent> parse_events(std::string_view text) {
  std::vector<OrderEvent> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos)
      throw parse_error::at_line(lineno + 1, "missing LF terminator");
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (!header_seen) {
      if (line != kEventHeader) throw parse_error::at_line(lineno, "bad header");
      header_seen = true;
      continue;
    }
    OrderEvent e = detail::parse_event_line(line, lineno);
    if (!out.empty() && e.ts < out.back().ts)
      throw ordering_error("line " + std::to_string(lineno) + ": timestamp " +
                           std::to_string(e.ts) + " precedes " + std::to_string(out.back().ts));
    out.push_back(std::move(e));
  }
  if (!header_seen) throw parse_error::at_line(1, "empty input, header expected");
  return out;
}

inline std::vector<OrderEvent> parse_events(std::istream& in) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_events(text);
}

inline void serialize_events(std::ostream& out, std::span<const OrderEvent> events) {
  out << kEventHeader << '\n';
  for (const auto& e : events) {
    out << e.ts << ',' << e.stock << ',' << to_string(e.kind) << ',' << to_string(e.side) << ','
        << e.price << ',' << e.volume << ',' << e.order_id << '\n';
  }
}

// ---------------------------------------------------------------------------
// Binary framing
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kBinaryRecordSize = 34;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (std::size_t k = 0; k < sizeof(T); ++k) out.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) u |= static_cast<U>(p[k]) << (8 * k);
  return static_cast<T>(u);
}

}  // namespace detail

inline std::string encode_binary(std::span<const OrderEvent> events) {
  std::string out;
  out.reserve(events.size() * (4 + kBinaryRecordSize));
  for (const auto& e : events) {
    if (!detail::valid_symbol(e.stock)) throw domain_error("symbol not encodable: " + e.stock);
    if (e.price <= 0 || e.price > std::numeric_limits<std::uint32_t>::max())
      throw domain_error("price out of uint32 range");
    if (e.volume == 0 || e.volume > std::numeric_limits<std::uint32_t>::max())
      throw domain_error("volume out of uint32 range");
    detail::put_le<std::uint32_t>(out, kBinaryRecordSize);
    detail::put_le<std::int64_t>(out, e.ts);
    std::string sym = e.stock;
    sym.resize(8, ' ');
    out += sym;
    out.push_back(static_cast<char>(e.kind));
    out.push_back(static_cast<char>(e.side));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.price));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.volume));
    detail::put_le<std::uint64_t>(out, e.order_id);
  }
  return out;
}

inline std::vector<OrderEvent> decode_binary(std::string_view bytes) {
  std::vector<OrderEvent> out;
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw parse_error::at_offset(pos, "truncated length prefix");
    auto len = detail::get_le<std::uint32_t>(base + pos);
    if (len != kBinaryRecordSize)
      throw parse_error::at_offset(pos, "record length " + std::to_string(len) + " != 34");
    if (bytes.size() - pos - 4 < len) throw parse_error::at_offset(pos, "truncated record");
    const unsigned char* p = base + pos + 4;
    OrderEvent e;
    e.ts = detail::get_le<std::int64_t>(p);
    std::string sym(reinterpret_cast<const char*>(p + 8), 8);
    while (!sym.empty() && sym.back() == ' ') sym.pop_back();
    if (!detail::valid_symbol(sym)) throw parse_error::at_offset(pos, "bad stock symbol");
    e.stock = std::move(sym);
    switch (p[16]) {
      case 'A': e.kind = EventKind::add; break;
      case 'C': e.kind = EventKind::cancel; break;
      case 'D': e.kind = EventKind::del; break;
      case 'E': e.kind = EventKind::execute; break;
      default: throw parse_error::at_offset(pos, "bad kind byte");
    }
    switch (p[17]) {
      case 'B': e.side = Side::bid; break;
      case 'S': e.side = Side::ask; break;
      default: throw parse_error::at_offset(pos, "bad side byte");
    }
    e.price = detail::get_le<std::uint32_t>(p + 18);
    e.volume = detail::get_le<std::uint32_t>(p + 22);
    e.order_id = detail::get_le<std::uint64_t>(p + 26);
    if (e.price <= 0) throw parse_error::at_offset(pos, "price_ticks must be positive");
    if (e.volume == 0) throw parse_error::at_offset(pos, "volume must be positive");
    if (!out.empty() && e.ts < out.back().ts)
      throw ordering_error("offset " + std::to_string(pos) + ": timestamp regression");
    out.push_back(std::move(e));
    pos += 4 + len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

/// Replays one stock's events in order. A quote is emitted whenever both
/// sides are present and (best bid, best ask) differs from the last emitted
/// quote; a trade is emitted per execute, signed by the resting side.
inline StockSeries replay_stock(std::string symbol, std::span<const OrderEvent> events,
                                Window window = {}) {
  StockSeries out;
  out.symbol = std::move(symbol);
  OrderBook book;
  std::optional<QuoteEvent> last;
  for (std::size_t k = 0; k < events.size(); ++k) {
    const OrderEvent& e = events[k];
    if (k > 0 && e.ts < events[k - 1].ts) throw ordering_error("timestamp regression in replay");
    try {
      book.apply(e);
    } catch (const integrity_error& err) {
      throw integrity_error(out.symbol + " @" + std::to_string(e.ts) + ": " + err.what());
    }
    if (e.kind == EventKind::execute && window.contains(e.ts)) {
      // resting ask means an incoming buy
      out.trades.push_back(TradeEvent{e.ts, e.side == Side::ask ? +1 : -1, e.volume, e.price});
    }
    auto bb = book.best_bid();
    auto ba = book.best_ask();
    if (!bb || !ba) continue;
    QuoteEvent q{e.ts, bb->price, ba->price};
    if (last && last->bid == q.bid && last->ask == q.ask) continue;
    last = q;
    if (window.contains(q.ts)) out.quotes.push_back(q);
  }
  return out;
}

/// Splits a mixed stream by stock (stable) and replays each. Output is
/// ordered by symbol.
inline std::vector<StockSeries> replay(std::span<const OrderEvent> events, Window window = {}) {
  std::map<std::string, std::vector<OrderEvent>> by_stock;
  for (std::size_t k = 0; k < events.size(); ++k) {
    if (k > 0 && events[k].ts < events[k - 1].ts)
      throw ordering_error("timestamp regression at event " + std::to_string(k));
    by_stock[events[k].stock].push_back(events[k]);
  }
  std::vector<StockSeries> out;
  out.reserve(by_stock.size());
  for (auto& [sym, evs] : by_stock) out.push_back(replay_stock(sym, evs, window));
  return out;
}

}  // namespace impactlab
