#include <gtest/gtest.h>

#include <random>

#include "impactlab/overlap.hpp"
#include "oracles.hpp"

using namespace impactlab;

namespace {

Matrix row_normalized(const Matrix& u) {
  Matrix out(u.rows(), u.cols());
  for (std::size_t i = 0; i < u.rows(); ++i) {
    std::vector<double> r(u.row(i).begin(), u.row(i).end());
    const auto m = oracle::two_pass(r);
    for (std::size_t n = 0; n < r.size(); ++n) out(i, n) = static_cast<double>((r[n] - m.mean) / m.std);
  }
  return out;
}

double min_eigen(const Matrix& c) { return static_cast<double>(oracle::symmetric_eigen(oracle::to_long(c)).first.back()); }

}  // namespace

TEST(NormalizeFactors, HandRow) {
  const Matrix u{{1, 0, -1}, {2, 2, 5}, {0, 1, 0}};
  const auto n = normalize_factors(u);
  EXPECT_NEAR(n.values(0, 0), std::sqrt(1.5), 1e-15);
  EXPECT_NEAR(n.values(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(n.values(0, 2), -std::sqrt(1.5), 1e-15);
}

TEST(NormalizeFactors, ConstantRowRejected) {
  EXPECT_THROW(normalize_factors(Matrix{{1, 1}, {0, 2}}), degenerate_error);
}

TEST(NormalizeFactors, MatchesTwoPassOracle) {
  std::mt19937_64 rng(1);
  const Matrix u = oracle::random_orthogonal(96, rng);
  const auto n = normalize_factors(u);
  const Matrix e = row_normalized(u);
  for (std::size_t i = 0; i < 96; ++i) {
    std::vector<double> r(n.values.row(i).begin(), n.values.row(i).end());
    const auto m = oracle::two_pass(r);
    EXPECT_NEAR(static_cast<double>(m.mean), 0.0, 1e-12);
    EXPECT_NEAR(static_cast<double>(m.std), 1.0, 1e-12);
    for (std::size_t k = 0; k < 96; ++k) EXPECT_NEAR(n.values(i, k), e(i, k), 1e-12);
  }
}

TEST(OverlapMatrix, GramProperties) {
  std::mt19937_64 rng(2);
  const auto a = normalize_factors(oracle::gaussian_matrix(10, 10, rng));
  const auto c = overlap_matrix(a, a, OverlapKind::mm);
  for (std::size_t n = 0; n < 10; ++n) {
    double s = 0;
    for (std::size_t i = 0; i < 10; ++i) s += a.values(i, n) * a.values(i, n);
    EXPECT_NEAR(c.c(n, n), s, 1e-12);
    EXPECT_GE(c.c(n, n), 0.0);
    for (std::size_t m = 0; m < 10; ++m) EXPECT_EQ(c.c(n, m), c.c(m, n));
  }
}

TEST(OverlapMatrix, PermutationEquivariance) {
  std::mt19937_64 rng(3);
  const auto a = normalize_factors(oracle::gaussian_matrix(8, 8, rng));
  std::vector<std::size_t> pi = {3, 0, 7, 1, 6, 2, 5, 4};
  NormalizedFactorMatrix b{Matrix(8, 8)};
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t n = 0; n < 8; ++n) b.values(i, n) = a.values(i, pi[n]);
  const auto c0 = overlap_matrix(a, a, OverlapKind::mm);
  const auto c1 = overlap_matrix(a, b, OverlapKind::ms);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t n = 0; n < 8; ++n) EXPECT_NEAR(c1.c(r, n), c0.c(r, pi[n]), 1e-12);
}

TEST(OverlapMatrix, MatchesNaiveProduct) {
  std::mt19937_64 rng(4);
  const auto a = normalize_factors(oracle::gaussian_matrix(8, 8, rng));
  const auto b = normalize_factors(oracle::gaussian_matrix(8, 8, rng));
  const auto c = overlap_matrix(a, b, OverlapKind::ms);
  const Matrix e = oracle::naive_product(oracle::naive_transpose(a.values), b.values);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(c.c.values()[k], e.values()[k], 1e-12);
  const auto d = normalize_factors(oracle::gaussian_matrix(7, 7, rng));
  EXPECT_THROW(overlap_matrix(a, d, OverlapKind::ms), incompatible_error);
}

TEST(OverlapMatrix, IdentitiesOnSvdFactors) {
  std::mt19937_64 rng(5);
  const Matrix rm = oracle::gaussian_matrix(20, 20, rng), rs = oracle::gaussian_matrix(20, 20, rng);
  const auto set = overlap_pipeline(rm, rs);
  for (const auto* c : {&set.mm, &set.ss, &set.ms})
    for (std::size_t col = 0; col < 20; ++col) {
      double s = 0;
      for (std::size_t r = 0; r < 20; ++r) s += c->c(r, col);
      EXPECT_LE(std::abs(s), 1e-9);
    }
  EXPECT_GE(min_eigen(set.mm.c), -1e-9);
  EXPECT_GE(min_eigen(set.ss.c), -1e-9);
  const auto um = normalize_factors(svd(rm).u), us = normalize_factors(svd(rs).u);
  EXPECT_EQ(overlap_matrix(um, us, OverlapKind::ms).c, overlap_matrix(us, um, OverlapKind::ms).c.transpose());
}

TEST(DecomposeOverlap, SymmetricMatchesEigenOracle) {
  std::mt19937_64 rng(6);
  const auto a = normalize_factors(oracle::gaussian_matrix(12, 12, rng));
  const auto c = overlap_matrix(a, a, OverlapKind::mm);
  const auto d = decompose_overlap(c);
  auto [ev, vecs] = oracle::symmetric_eigen(oracle::to_long(c.c));
  std::vector<double> abs_ev;
  for (auto e : ev) abs_ev.push_back(std::abs(static_cast<double>(e)));
  std::sort(abs_ev.rbegin(), abs_ev.rend());
  for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(d.s[k], abs_ev[k], 1e-9 * (1 + abs_ev[0]));
  // Gram matrix: U and V columns agree up to sign for the well-separated values.
  for (std::size_t k = 0; k + 1 < 12; ++k) {
    if (d.s[k] < 1e-6 * d.s[0]) continue;
    double dot = 0;
    for (std::size_t r = 0; r < 12; ++r) dot += d.u(r, k) * d.v(r, k);
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-8);
    double dot_oracle = 0;
    for (std::size_t r = 0; r < 12; ++r) dot_oracle += d.u(r, k) * static_cast<double>(vecs[r][k]);
    EXPECT_NEAR(std::abs(dot_oracle), 1.0, 1e-8);
  }
}

TEST(DecomposeOverlap, ZeroMatrix) {
  const auto d = decompose_overlap({Matrix(5, 5), OverlapKind::ms});
  for (double s : d.s) EXPECT_EQ(s, 0.0);
}

TEST(RandomResponse, MomentsAndDeterminism) {
  std::mt19937_64 rng(7);
  Matrix r = oracle::gaussian_matrix(96, 96, rng);
  for (auto& v : r.values()) v = 0.3 + 2.0 * v;
  const auto m = oracle::two_pass({r.values().begin(), r.values().end()});
  for (auto family : {NullFamily::gaussian, NullFamily::uniform, NullFamily::permutation}) {
    const Matrix a = random_response(r, 11, family);
    const auto ma = oracle::two_pass({a.values().begin(), a.values().end()});
    EXPECT_NEAR(static_cast<double>(ma.mean), static_cast<double>(m.mean), 4 * static_cast<double>(m.std) / 96);
    EXPECT_NEAR(static_cast<double>(ma.std), static_cast<double>(m.std), 0.05 * static_cast<double>(m.std));
    EXPECT_EQ(random_response(r, 11, family), a);
    const Matrix b = random_response(r, 12, family);
    std::size_t differ = 0;
    for (std::size_t k = 0; k < a.values().size(); ++k) differ += a.values()[k] != b.values()[k];
    EXPECT_GE(differ, static_cast<std::size_t>(0.99 * 96 * 96));
  }
  Matrix bad = r;
  bad(0, 0) = INFINITY;
  EXPECT_THROW(random_response(bad, 1), domain_error);
}

TEST(RandomResponse, PermutationKeepsEntries) {
  std::mt19937_64 rng(8);
  const Matrix r = oracle::gaussian_matrix(10, 10, rng);
  const Matrix p = random_response(r, 3, NullFamily::permutation);
  std::vector<double> a(r.values().begin(), r.values().end()), b(p.values().begin(), p.values().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(NullPipeline, ZeroMeanAndReproducible) {
  std::mt19937_64 rng(9);
  const Matrix rm = oracle::gaussian_matrix(40, 40, rng), rs = oracle::gaussian_matrix(40, 40, rng);
  const auto a = null_overlap_pipeline(rm, rs, 5);
  const auto b = null_overlap_pipeline(rm, rs, 5);
  EXPECT_EQ(a.ms.c, b.ms.c);
  EXPECT_EQ(a.mm.c, b.mm.c);
  const auto m = oracle::two_pass({a.ms.c.values().begin(), a.ms.c.values().end()});
  EXPECT_LE(std::abs(static_cast<double>(m.mean)), 4 * static_cast<double>(m.std) / 40);
}

TEST(DeriveSeed, DistinctAndStable) {
  EXPECT_EQ(derive_seed(1, 0), derive_seed(1, 0));
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Parsing, KindsAndFamilies) {
  EXPECT_EQ(parse_overlap_kind("ms"), OverlapKind::ms);
  EXPECT_FALSE(parse_overlap_kind("sm"));
  EXPECT_EQ(parse_null_family("permutation"), NullFamily::permutation);
  EXPECT_FALSE(parse_null_family("cauchy"));
}
