#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "impactlab/io.hpp"
#include "impactlab/synth.hpp"
#include "oracles.hpp"

using namespace impactlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("impactlab_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  for (int k = 0; k < 1000; ++k) {
    const double v = z(rng) * std::pow(10.0, k % 20 - 10);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_fixed(-0.000001, 5), "0.00000");
  EXPECT_EQ(format_fixed(0.980, 3), "0.980");
  EXPECT_EQ(format_fixed(-0.0019, 5), "-0.00190");
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(MatrixCsv, RoundTripWithMissing) {
  std::mt19937_64 rng(2);
  LabeledMatrix m{{"A", "B", "C"}, {"A", "B", "C"}, oracle::gaussian_matrix(3, 3, rng), std::vector<bool>(9, false)};
  m.missing[4] = true;
  m.values(1, 1) = 0.0;
  const std::string text = matrix_csv(m);
  EXPECT_NE(text.find("B,"), std::string::npos);
  const auto back = parse_matrix_csv(text);
  EXPECT_EQ(back.row_labels, m.row_labels);
  EXPECT_EQ(back.col_labels, m.col_labels);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.missing, m.missing);
  EXPECT_EQ(matrix_csv(back), text);
}

TEST(MatrixCsv, MalformedReportsLine) {
  try {
    parse_matrix_csv(",A,B\nA,1,2\nB,3\n");
    FAIL();
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_matrix_csv(",A,B\nA,1,x\nB,3,4\n"), parse_error);
  EXPECT_THROW(parse_matrix_csv(""), parse_error);
}

TEST(ResponseFiles, SidecarRoundTrip) {
  const auto dir = scratch("response");
  auto r = ResponseMatrix::empty({"AA", "BB"}, {XKind::spread, YKind::signed_volume, Subset::weighted});
  r.values = Matrix{{0.25, -1.5}, {0.0, 3.0}};
  r.counts = {10, 20, 0, 5};
  r.one_sided = 1;
  write_response(dir / "R.csv", r);
  EXPECT_TRUE(fs::exists(dir / "R.json"));
  const auto back = read_response(dir / "R.csv");
  EXPECT_EQ(back.values, r.values);
  EXPECT_EQ(back.counts, r.counts);
  EXPECT_EQ(back.key, r.key);
  EXPECT_EQ(back.one_sided, 1u);
  fs::remove(dir / "R.json");
  const auto bare = read_response(dir / "R.csv");
  EXPECT_EQ(bare.counts, (std::vector<std::uint64_t>{1, 1, 0, 1}));
}

TEST(WeightsFiles, CsvAndCounts) {
  PairWeights w;
  w.symbols = {"A", "B"};
  w.counts = {{3, 1, 0}, {0, 0, 4}, {2, 2, 1}, {1, 0, 0}};
  const auto dir = scratch("weights");
  write_weights(dir / "w.csv", w);
  const auto m = read_matrix_csv(dir / "w.csv");
  EXPECT_EQ(m.values(0, 0), 0.75);
  EXPECT_TRUE(m.missing[1]);
  EXPECT_EQ(m.values(1, 0), 0.5);
  const auto counts = read_text_file((dir / "w.counts.csv").string());
  EXPECT_EQ(counts, "quoted,traded,single,multiple,dropped\nA,A,3,1,0\nA,B,0,0,4\nB,A,2,2,1\nB,B,1,0,0\n");
}

TEST(SeriesFiles, RoundTrip) {
  auto cfg = MarketConfig::uniform(3, 1.0, 4.0);
  cfg.session_ms = 120'000;
  const auto stocks = replay(generate(cfg));
  const auto dir = scratch("series");
  write_series(dir / "q", dir / "t", stocks);
  const auto back = read_series(dir / "q", dir / "t");
  ASSERT_EQ(back.size(), stocks.size());
  for (std::size_t k = 0; k < stocks.size(); ++k) {
    EXPECT_EQ(back[k].symbol, stocks[k].symbol);
    EXPECT_EQ(back[k].quotes, stocks[k].quotes);
    EXPECT_EQ(back[k].trades, stocks[k].trades);
  }
  EXPECT_THROW(read_series(dir / "nope", dir / "t"), io_error);
}

TEST(SeriesFiles, Validation) {
  EXPECT_THROW(parse_quotes_csv("ts_ms,bid,ask\n1,101,100\n"), integrity_error);
  EXPECT_THROW(parse_quotes_csv("ts_ms,bid,ask\n5,100,101\n1,100,101\n"), ordering_error);
  EXPECT_THROW(parse_trades_csv("ts_ms,sign,volume,price\n1,0,10,100\n"), parse_error);
  EXPECT_THROW(parse_trades_csv("ts_ms,sign,volume,price\n1,1,0,100\n"), parse_error);
  EXPECT_THROW(parse_trades_csv("ts,sign\n"), parse_error);
}

TEST(SvdFiles, RoundTrip) {
  std::mt19937_64 rng(3);
  const auto d = svd(oracle::gaussian_matrix(5, 5, rng));
  const auto dir = scratch("svd");
  write_svd(dir / "U.csv", dir / "S.csv", dir / "V.csv", {"a", "b", "c", "d", "e"}, d);
  const auto back = read_svd(dir / "U.csv", dir / "S.csv", dir / "V.csv");
  EXPECT_EQ(back.u, d.u);
  EXPECT_EQ(back.v, d.v);
  EXPECT_EQ(back.s, d.s);
  EXPECT_EQ(read_text_file((dir / "U.csv").string()).substr(0, 11), ",1,2,3,4,5\n");
}

TEST(Samples, BothLayouts) {
  EXPECT_EQ(parse_sample("value\n1.5\n-2\n"), (std::vector<double>{1.5, -2}));
  EXPECT_EQ(parse_sample("3\n4\n"), (std::vector<double>{3, 4}));
  EXPECT_EQ(parse_sample(",x,y\na,1,\nb,2,3\n"), (std::vector<double>{1, 2, 3}));
  const std::vector<double> x = {0.1, 1e-20, -7};
  EXPECT_EQ(parse_sample(sample_csv(x)), x);
  EXPECT_THROW(parse_sample("1\nabc\n"), parse_error);
}

TEST(PlotData, DensityAndHeatmap) {
  const std::vector<double> x = {0, 1, 1, 2, 2, 2, 3};
  const auto d = empirical_density(x, {BinRule::fixed, 3});
  const NormalParams n{1.5, 1.0};
  const std::string csv = density_csv(d, &n, nullptr);
  auto lines = split_lines(csv);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "center,empirical,normal,tls");
  EXPECT_EQ(split_fields(lines[1]).size(), 4u);
  EXPECT_TRUE(split_fields(lines[1])[3].empty());
  EXPECT_EQ(heatmap_csv(Matrix{{1, 2}, {3, 4}}), "row,col,value\n1,1,1\n1,2,2\n2,1,3\n2,2,4\n");
}

TEST(WriteFile, CreatesDirectoriesAtomically) {
  const auto dir = scratch("write");
  write_file(dir / "a" / "b" / "c.txt", "hello");
  EXPECT_EQ(read_text_file((dir / "a" / "b" / "c.txt").string()), "hello");
  EXPECT_FALSE(fs::exists(dir / "a" / "b" / "c.txt.tmp"));
  EXPECT_EQ(sha256_file(dir / "a" / "b" / "c.txt"), sha256_hex("hello"));
}
