#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "impactlab/lob.hpp"
#include "impactlab/synth.hpp"
#include "oracles.hpp"

using namespace impactlab;

namespace {

OrderEvent ev(Timestamp ts, EventKind k, Side s, Price p, Volume v, OrderId id, std::string sym = "AAA") {
  return {ts, std::move(sym), k, s, p, v, id};
}

std::string serialize(const std::vector<OrderEvent>& e) {
  std::ostringstream os;
  serialize_events(os, e);
  return os.str();
}

std::vector<OrderEvent> synthetic(std::size_t n_stocks, double seconds, std::uint64_t seed) {
  auto cfg = MarketConfig::uniform(n_stocks, 2.0, 6.0);
  cfg.session_ms = static_cast<Timestamp>(seconds * 1000);
  cfg.impact = planted_impact(n_stocks, 0.5, 0.1, seed);
  cfg.burst_prob = 0.1;
  cfg.seed = seed;
  return generate(cfg);
}

}  // namespace

TEST(ParseEvents, FourLineFile) {
  const std::string text =
      "ts_ms,stock,kind,side,price_ticks,volume,order_id\n"
      "0,AAA,add,bid,100,500,1\n"
      "0,AAA,add,ask,102,300,2\n"
      "5,AAA,execute,ask,102,100,2\n"
      "9,AAA,execute,bid,100,500,1\n";
  auto e = parse_events(text);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_EQ(e[2].kind, EventKind::execute);
  EXPECT_EQ(e[2].side, Side::ask);
  EXPECT_EQ(e[3].volume, 500u);
  EXPECT_EQ(serialize(e), text);
}

TEST(ParseEvents, ZeroVolumeReportsLine) {
  const std::string text =
      "ts_ms,stock,kind,side,price_ticks,volume,order_id\n"
      "0,AAA,add,bid,100,500,1\n"
      "1,AAA,add,ask,101,0,2\n";
  try {
    parse_events(text);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.position_unit(), parse_error::unit::line);
  }
}

TEST(ParseEvents, MalformedFields) {
  const std::string h = "ts_ms,stock,kind,side,price_ticks,volume,order_id\n";
  EXPECT_THROW(parse_events(h + "0,AAA,add,bid,100,5\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,add,bid,100,5,1,9\n"), parse_error);
  EXPECT_THROW(parse_events(h + "x,AAA,add,bid,100,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,modify,bid,100,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,add,buy,100,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,add,bid,0,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,add,bid,-3,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,TOOLONGSYM,add,bid,1,5,1\n"), parse_error);
  EXPECT_THROW(parse_events(h + "0,AAA,add,bid,100,5,1"), parse_error);
  EXPECT_THROW(parse_events("ts,stock\n"), parse_error);
  EXPECT_THROW(parse_events(""), parse_error);
}

TEST(ParseEvents, TimestampRegressionIsOrderingError) {
  const std::string text =
      "ts_ms,stock,kind,side,price_ticks,volume,order_id\n"
      "5,AAA,add,bid,100,500,1\n"
      "4,AAA,add,ask,101,500,2\n";
  EXPECT_THROW(parse_events(text), ordering_error);
}

TEST(ParseEvents, MillionEventRoundTrip) {
  auto cfg = MarketConfig::uniform(4, 20.0, 60.0);
  cfg.session_ms = 1'000'000;
  cfg.seed = 3;
  auto events = generate(cfg);
  ASSERT_GE(events.size(), 1'000'000u);
  events.resize(1'000'000);
  const std::string text = serialize(events);
  const auto parsed = parse_events(text);
  ASSERT_EQ(parsed.size(), 1'000'000u);
  EXPECT_EQ(serialize(parsed), text);
}

TEST(BinaryEvents, RoundTripAndFraming) {
  const auto events = synthetic(3, 60, 11);
  const std::string bytes = encode_binary(events);
  EXPECT_EQ(bytes.size(), events.size() * 38);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 34);
  EXPECT_EQ(decode_binary(bytes), events);
}

TEST(BinaryEvents, ErrorsCarryOffset) {
  std::vector<OrderEvent> e = {ev(0, EventKind::add, Side::bid, 100, 5, 1), ev(1, EventKind::add, Side::ask, 101, 5, 2)};
  std::string bytes = encode_binary(e);
  std::string bad = bytes;
  bad[38 + 4 + 16] = 'Z';
  try {
    decode_binary(bad);
    FAIL();
  } catch (const parse_error& err) {
    EXPECT_EQ(err.position_unit(), parse_error::unit::byte_offset);
    EXPECT_EQ(err.position(), 38u);
  }
  EXPECT_THROW(decode_binary(bytes.substr(0, 50)), parse_error);
  bad = bytes;
  bad[0] = 33;
  EXPECT_THROW(decode_binary(bad), parse_error);
  std::vector<OrderEvent> rev = {e[1], e[0]};
  EXPECT_THROW(decode_binary(encode_binary(rev)), ordering_error);
}

TEST(OrderBook, AddBid) {
  OrderBook b;
  b.apply(ev(0, EventKind::add, Side::bid, 100, 500, 1));
  ASSERT_TRUE(b.best_bid());
  EXPECT_EQ(b.best_bid()->price, 100);
  EXPECT_EQ(b.best_bid()->volume, 500u);
  EXPECT_FALSE(b.best_ask());
}

TEST(OrderBook, ExecuteExhaustsLevel) {
  OrderBook b;
  b.apply(ev(0, EventKind::add, Side::bid, 100, 500, 1));
  b.apply(ev(0, EventKind::add, Side::bid, 99, 200, 2));
  b.apply(ev(1, EventKind::execute, Side::bid, 100, 500, 1));
  EXPECT_EQ(b.best_bid()->price, 99);
  b.apply(ev(2, EventKind::execute, Side::bid, 99, 200, 2));
  EXPECT_FALSE(b.best_bid());
  EXPECT_EQ(b.level_count(Side::bid), 0u);
}

TEST(OrderBook, AddsThenDeletesLeaveEmptyBook) {
  OrderBook b;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Price> off(0, 20);
  std::uniform_int_distribution<Volume> vol(1, 1000);
  std::vector<OrderEvent> adds;
  for (OrderId k = 1; k <= 200; ++k) {
    const bool bid = k % 2;
    adds.push_back(ev(0, EventKind::add, bid ? Side::bid : Side::ask, bid ? 1000 - off(rng) : 1001 + off(rng), vol(rng), k));
    b.apply(adds.back());
  }
  for (const auto& a : adds) b.apply(ev(1, EventKind::del, a.side, a.price, a.volume, a.order_id));
  EXPECT_TRUE(b.empty());
  EXPECT_EQ(b, OrderBook{});
}

TEST(OrderBook, IntegrityErrors) {
  OrderBook b;
  b.apply(ev(0, EventKind::add, Side::bid, 100, 500, 1));
  b.apply(ev(0, EventKind::add, Side::ask, 105, 500, 2));
  const OrderBook before = b;
  EXPECT_THROW(b.apply(ev(1, EventKind::execute, Side::bid, 100, 10, 9)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::cancel, Side::bid, 100, 10, 9)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::add, Side::bid, 99, 10, 1)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::add, Side::bid, 105, 10, 3)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::add, Side::ask, 100, 10, 3)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::execute, Side::bid, 100, 501, 1)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::del, Side::bid, 100, 499, 1)), integrity_error);
  EXPECT_THROW(b.apply(ev(1, EventKind::cancel, Side::ask, 100, 1, 1)), integrity_error);
  EXPECT_EQ(b, before);
}

TEST(OrderBook, LevelVolumeConservation) {
  const auto events = synthetic(1, 300, 2);
  OrderBook b;
  std::map<std::pair<Side, Price>, long long> expect;
  for (const auto& e : events) {
    b.apply(e);
    expect[{e.side, e.price}] += e.kind == EventKind::add ? static_cast<long long>(e.volume) : -static_cast<long long>(e.volume);
  }
  for (const auto& [k, v] : expect) EXPECT_EQ(static_cast<long long>(b.volume_at(k.first, k.second)), v);
}

TEST(Replay, BuyExecuteAtAskIsPositive) {
  std::vector<OrderEvent> e = {ev(0, EventKind::add, Side::bid, 100, 500, 1), ev(0, EventKind::add, Side::ask, 102, 500, 2),
                               ev(3, EventKind::execute, Side::ask, 102, 100, 2)};
  auto s = replay(e);
  ASSERT_EQ(s.size(), 1u);
  ASSERT_EQ(s[0].trades.size(), 1u);
  EXPECT_EQ(s[0].trades[0].sign, +1);
  EXPECT_EQ(s[0].trades[0].volume, 100u);
  e.push_back(ev(4, EventKind::execute, Side::bid, 100, 50, 1));
  EXPECT_EQ(replay(e)[0].trades[1].sign, -1);
}

TEST(Replay, ImprovingBidEmitsQuote) {
  std::vector<OrderEvent> e = {ev(0, EventKind::add, Side::bid, 100, 500, 1), ev(0, EventKind::add, Side::ask, 104, 500, 2),
                               ev(7, EventKind::add, Side::bid, 101, 10, 3)};
  auto s = replay(e)[0];
  ASSERT_EQ(s.quotes.size(), 2u);
  EXPECT_EQ(s.quotes[1], (QuoteEvent{7, 101, 104}));
  EXPECT_EQ(s.quotes[1].mid_x2(), 205);
  EXPECT_EQ(s.quotes[1].spread(), 3);
}

TEST(Replay, QuoteCountMatchesRescanTracker) {
  auto cfg = MarketConfig::uniform(1, 3.0, 10.0);
  cfg.session_ms = 2'000'000;
  cfg.seed = 21;
  auto events = generate(cfg);
  ASSERT_GE(events.size(), 10'000u);
  events.resize(10'000);
  const auto s = replay(events);
  const auto oracle_quotes = oracle::rescan_quotes(events);
  EXPECT_EQ(s[0].quotes.size(), oracle_quotes.size());
  EXPECT_EQ(s[0].quotes, oracle_quotes);
}

TEST(Replay, SeriesPropertiesOnSyntheticSession) {
  const auto events = synthetic(4, 600, 8);
  const auto a = replay(events);
  const auto b = replay(events);
  ASSERT_EQ(a.size(), 4u);
  std::map<std::string, std::map<OrderId, Side>> resting;
  for (const auto& e : events)
    if (e.kind == EventKind::add) resting[e.stock][e.order_id] = e.side;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].quotes, b[k].quotes);
    EXPECT_EQ(a[k].trades, b[k].trades);
    for (std::size_t q = 1; q < a[k].quotes.size(); ++q) {
      EXPECT_LE(a[k].quotes[q - 1].ts, a[k].quotes[q].ts);
      EXPECT_FALSE(a[k].quotes[q - 1].bid == a[k].quotes[q].bid && a[k].quotes[q - 1].ask == a[k].quotes[q].ask);
    }
    for (std::size_t t = 1; t < a[k].trades.size(); ++t) EXPECT_LE(a[k].trades[t - 1].ts, a[k].trades[t].ts);
    std::vector<int> signs;
    for (const auto& e : events)
      if (e.stock == a[k].symbol && e.kind == EventKind::execute)
        signs.push_back(resting[e.stock][e.order_id] == Side::ask ? 1 : -1);
    ASSERT_EQ(signs.size(), a[k].trades.size());
    for (std::size_t t = 0; t < signs.size(); ++t) EXPECT_EQ(a[k].trades[t].sign, signs[t]);
  }
}

TEST(Replay, WindowFiltersEmittedSeries) {
  const auto events = synthetic(2, 120, 4);
  const Window w{30'000, 60'000};
  const auto full = replay(events);
  const auto cut = replay(events, w);
  for (std::size_t k = 0; k < full.size(); ++k) {
    std::vector<QuoteEvent> q;
    std::vector<TradeEvent> t;
    for (const auto& x : full[k].quotes)
      if (w.contains(x.ts)) q.push_back(x);
    for (const auto& x : full[k].trades)
      if (w.contains(x.ts)) t.push_back(x);
    EXPECT_EQ(cut[k].quotes, q);
    EXPECT_EQ(cut[k].trades, t);
  }
}

TEST(Replay, IntegrityErrorPropagates) {
  std::vector<OrderEvent> e = {ev(0, EventKind::add, Side::bid, 100, 500, 1), ev(1, EventKind::cancel, Side::bid, 100, 5, 7)};
  EXPECT_THROW(replay(e), integrity_error);
}
