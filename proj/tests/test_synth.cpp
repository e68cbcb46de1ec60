#include <gtest/gtest.h>

#include "impactlab/response.hpp"
#include "impactlab/synth.hpp"

using namespace impactlab;

namespace {

MarketConfig small_market(std::uint64_t seed) {
  auto cfg = MarketConfig::uniform(4, 1.0, 5.0);
  cfg.session_ms = 900'000;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Generate, SameSeedSameStream) {
  auto cfg = small_market(3);
  cfg.impact = planted_impact(4, 0.4, 0.1, 9);
  cfg.burst_prob = 0.2;
  EXPECT_EQ(generate(cfg), generate(cfg));
  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(generate(cfg), generate(other));
}

TEST(Generate, ReplaysWithoutIntegrityErrors) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto cfg = small_market(seed);
    cfg.impact = planted_impact(4, 1.0, 0.5, seed);
    cfg.burst_prob = 0.3;
    cfg.burst_size = 3;
    cfg.sign_autocorr = 0.6;
    const auto events = generate(cfg);
    EXPECT_NO_THROW(replay(events)) << seed;
    for (std::size_t k = 1; k < events.size(); ++k) ASSERT_LE(events[k - 1].ts, events[k].ts);
  }
}

TEST(Generate, ZeroImpactWithinCltBound) {
  auto cfg = MarketConfig::uniform(8, 1.0, 4.0);
  cfg.seed = 17;
  const auto st = replay(generate(cfg));
  const auto r = response_matrix(st, {XKind::midpoint, YKind::sign, Subset::all});
  std::size_t ok = 0;
  for (std::size_t k = 0; k < 64; ++k) {
    ASSERT_GT(r.counts[k], 0u);
    ok += std::abs(r.values.values()[k]) <= 4.0 / std::sqrt(static_cast<double>(r.counts[k]));
  }
  EXPECT_GE(ok, 64u * 99 / 100);
}

TEST(Generate, DiagonalImpactPositive) {
  auto cfg = MarketConfig::uniform(5, 1.0, 4.0);
  cfg.impact = Matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) cfg.impact(i, i) = 0.3;
  cfg.seed = 5;
  const auto st = replay(generate(cfg));
  const auto r = response_matrix(st, {XKind::midpoint, YKind::sign, Subset::all});
  for (std::size_t i = 0; i < 5; ++i) {
    ASSERT_GE(r.count(i, i), 1000u);
    EXPECT_GT(r.values(i, i), 0.0);
  }
}

TEST(Generate, SignAutocorrelation) {
  for (double rho : {-0.4, 0.0, 0.3, 0.7}) {
    auto cfg = MarketConfig::uniform(1, 10.0, 5.0);
    cfg.session_ms = 2'000'000;
    cfg.sign_autocorr = rho;
    cfg.seed = 23;
    const auto st = replay(generate(cfg));
    ASSERT_GE(st[0].trades.size(), 15'000u);
    EXPECT_NEAR(sign_autocorrelation(st[0].trades), rho, 0.02) << rho;
  }
}

TEST(Generate, InfeasibleConfigsRejected) {
  auto cfg = small_market(1);
  cfg.trade_rate[2] = 0.0;
  EXPECT_THROW(generate(cfg), config_error);
  cfg = small_market(1);
  cfg.impact = Matrix(3, 3);
  EXPECT_THROW(generate(cfg), config_error);
  cfg = small_market(1);
  cfg.single_fraction_target = 1.5;
  EXPECT_THROW(generate(cfg), config_error);
  cfg = small_market(1);
  cfg.burst_prob = -0.1;
  EXPECT_THROW(generate(cfg), config_error);
  EXPECT_THROW(generate(MarketConfig{}), config_error);
}

TEST(Calibrate, HitsSixtyFivePercent) {
  auto cfg = small_market(31);
  cfg.single_fraction_target = 0.65;
  const auto r = calibrate_single_fraction(cfg);
  EXPECT_GE(r.measured, 0.63);
  EXPECT_LE(r.measured, 0.67);
  EXPECT_NEAR(measure_single_fraction(r.config), r.measured, 1e-15);
  EXPECT_GT(r.config.burst_prob, 0.0);
}

TEST(Calibrate, SparseTradingReachesOne) {
  auto cfg = MarketConfig::uniform(3, 0.05, 20.0);
  cfg.session_ms = 3'600'000;
  cfg.single_fraction_target = 1.0;
  cfg.seed = 2;
  const auto r = calibrate_single_fraction(cfg);
  EXPECT_GE(r.measured, 0.98);
  EXPECT_EQ(r.config.burst_prob, 0.0);
  EXPECT_EQ(r.evaluations, 1);
}

TEST(Calibrate, BurstsReachZero) {
  auto cfg = small_market(6);
  cfg.single_fraction_target = 0.0;
  const auto r = calibrate_single_fraction(cfg);
  EXPECT_LE(r.measured, 0.05);
}

TEST(Calibrate, UnreachableTarget) {
  auto cfg = MarketConfig::uniform(3, 5.0, 0.5);
  cfg.session_ms = 300'000;
  cfg.single_fraction_target = 0.99;
  EXPECT_THROW(calibrate_single_fraction(cfg), calibration_error);
}

TEST(Calibrate, StableUnderSeedVariation) {
  auto cfg = small_market(100);
  cfg.single_fraction_target = 0.65;
  const auto tuned = calibrate_single_fraction(cfg).config;
  int within = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto c = tuned;
    c.seed = seed;
    within += std::abs(measure_single_fraction(c) - 0.65) <= 0.02;
  }
  EXPECT_GE(within, 48);
}

TEST(MarketConfigText, ParsesAllImpactModes) {
  auto c = parse_market_config(
      "n_stocks = 3\nsession_ms = 60000\nseed = 4\ntrade_rate = 1, 2, 3\nquote_rate = 5\n"
      "impact = values 1 0 0  0 1 0  0 0 1\n");
  EXPECT_EQ(c.symbols, (std::vector<std::string>{"S01", "S02", "S03"}));
  EXPECT_EQ(c.trade_rate, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.quote_rate, (std::vector<double>{5, 5, 5}));
  EXPECT_EQ(c.impact, Matrix::identity(3));
  c = parse_market_config("symbols = AA, BB\nimpact = diagonal 0.5\n");
  EXPECT_EQ(c.impact, (Matrix{{0.5, 0}, {0, 0.5}}));
  c = parse_market_config("n_stocks = 4\nimpact = planted 0.5 0.1\nseed = 9\n");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c.impact(i, i), 0.5);
  EXPECT_EQ(parse_market_config("n_stocks = 4\nimpact = planted 0.5 0.1\nseed = 9\n").impact, c.impact);
}

TEST(MarketConfigText, CollectsAllErrors) {
  try {
    parse_market_config("n_stocks = 3\nbogus = 1\ntrade_rate = 1, 2\nburst_prob = x\nimpact = diagonal\n");
    FAIL();
  } catch (const config_error& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("bogus"), std::string::npos);
    EXPECT_NE(w.find("trade_rate"), std::string::npos);
    EXPECT_NE(w.find("burst_prob"), std::string::npos);
    EXPECT_NE(w.find("impact"), std::string::npos);
  }
  EXPECT_THROW(parse_market_config("seed = 1\n"), config_error);
  EXPECT_THROW(parse_market_config("n_stocks = 2\ntrade_rate = 0\n"), config_error);
}

TEST(PlantedImpact, DiagonalAndSeeded) {
  const Matrix a = planted_impact(6, 0.7, 0.2, 1), b = planted_impact(6, 0.7, 0.2, 1);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a(i, i), 0.7);
  EXPECT_NE(planted_impact(6, 0.7, 0.2, 2), a);
}
