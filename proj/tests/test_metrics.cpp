#include <gtest/gtest.h>

#include <random>

#include "embedseg/metrics.hpp"
#include "oracles.hpp"

using namespace embedseg;

namespace {

void fill_rect(LabelMask& m, int r0, int c0, int r1, int c1, Label id) {
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m(r, c) = id;
}

ScoreMatrix to_scores(const std::vector<std::vector<double>>& v) {
  ScoreMatrix s{static_cast<int>(v.size()), v.empty() ? 0 : static_cast<int>(v[0].size()), {}};
  for (const auto& row : v) s.values.insert(s.values.end(), row.begin(), row.end());
  return s;
}

// Random blocky mask with up to `k` objects drawn as overlapping rectangles.
LabelMask random_mask(int h, int w, int k, std::mt19937_64& rng) {
  LabelMask m(h, w, 0);
  std::uniform_int_distribution<int> rr(0, h - 1), cc(0, w - 1);
  for (Label id = 1; id <= k; ++id) {
    int r0 = rr(rng), r1 = rr(rng), c0 = cc(rng), c1 = cc(rng);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    fill_rect(m, r0, c0, r1 + 1, c1 + 1, id);
  }
  return m;
}

LabelMask relabel(const LabelMask& m, const std::vector<Label>& map) {
  LabelMask out = m;
  for (auto& v : out.values()) v = map[v];
  return out;
}

}  // namespace

TEST(PairwiseF, Examples) {
  LabelMask a(8, 8, 0);
  fill_rect(a, 2, 2, 6, 6, 1);
  const auto same = pairwise_f(a, a);
  ASSERT_EQ(same.rows, 1);
  ASSERT_EQ(same.cols, 1);
  EXPECT_DOUBLE_EQ(same(0, 0), 1.0);

  LabelMask b(8, 8, 0);
  fill_rect(b, 0, 0, 2, 2, 1);
  EXPECT_DOUBLE_EQ(pairwise_f(b, a)(0, 0), 0.0);

  LabelMask half(8, 8, 0);
  fill_rect(half, 2, 2, 4, 6, 3);
  EXPECT_NEAR(pairwise_f(half, a)(0, 0), 2.0 / 3.0, 1e-12);
}

TEST(PairwiseF, DimensionMismatch) {
  EXPECT_THROW(pairwise_f(LabelMask(4, 4, 0), LabelMask(4, 5, 0)), InputError);
  EXPECT_THROW(evaluate(LabelMask(4, 4, 0), LabelMask(5, 4, 0)), InputError);
}

TEST(Hungarian, DiagonalDominant) {
  const auto r = hungarian_match(to_scores({{0.9, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.7}}));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(r.pred_to_truth[i], i);
  EXPECT_NEAR(r.total, 2.4, 1e-12);
}

TEST(Hungarian, AllZeroGivesEmptyMapping) {
  const auto r = hungarian_match(to_scores({{0, 0}, {0, 0}, {0, 0}}));
  for (const auto& m : r.pred_to_truth) EXPECT_FALSE(m.has_value());
  EXPECT_EQ(r.total, 0.0);
  EXPECT_EQ(hungarian_match(ScoreMatrix{}).total, 0.0);
}

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 7), sixty_four(0, 64);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution sparse(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = dim(rng), cols = dim(rng);
    const bool dyadic = trial % 2 == 0;
    std::vector<std::vector<double>> s(rows, std::vector<double>(cols));
    for (auto& row : s)
      for (auto& v : row) v = sparse(rng) ? 0.0 : (dyadic ? sixty_four(rng) / 64.0 : u(rng));
    const auto r = hungarian_match(to_scores(s));
    const double brute = oracle::brute_force_assignment(s);
    // Dyadic scores sum exactly, so totals must agree bit for bit.
    if (dyadic) {
      EXPECT_EQ(r.total, brute) << rows << "x" << cols;
    } else {
      EXPECT_NEAR(r.total, brute, 1e-12) << rows << "x" << cols;
    }
    std::set<int> used;
    for (int i = 0; i < rows; ++i) {
      if (!r.pred_to_truth[i]) continue;
      EXPECT_TRUE(used.insert(*r.pred_to_truth[i]).second) << "mapping not injective";
      EXPECT_GT(s[i][*r.pred_to_truth[i]], 0.0);
      EXPECT_EQ(r.pair_scores[i], s[i][*r.pred_to_truth[i]]);
    }
  }
}

TEST(Hungarian, RejectsNonFinite) {
  EXPECT_THROW(hungarian_match(to_scores({{std::nan("")}})), InputError);
}

TEST(Overlap, Examples) {
  LabelMask truth(20, 30, 0);
  fill_rect(truth, 0, 0, 10, 10, 1);
  fill_rect(truth, 10, 15, 20, 25, 2);
  const auto self = overlap_prf(truth, truth);
  EXPECT_EQ(self.p, 1.0);
  EXPECT_EQ(self.r, 1.0);
  EXPECT_EQ(self.f, 1.0);

  const auto empty = overlap_prf(LabelMask(20, 30, 0), truth);
  EXPECT_EQ(empty.p, 0.0);
  EXPECT_EQ(empty.r, 0.0);
  EXPECT_EQ(empty.f, 0.0);

  // One exact copy of object 1 and a 50 px object inside object 2.
  LabelMask pred(20, 30, 0);
  fill_rect(pred, 0, 0, 10, 10, 7);
  fill_rect(pred, 10, 15, 15, 25, 4);
  const auto prf = overlap_prf(pred, truth);
  EXPECT_NEAR(prf.p, 1.0, 1e-15);
  EXPECT_NEAR(prf.r, 0.75, 1e-15);
  EXPECT_NEAR(prf.f, 6.0 / 7.0, 1e-15);
  const auto brute = oracle::brute_overlap(pred, truth);
  EXPECT_NEAR(prf.p, brute.p, 1e-15);
  EXPECT_NEAR(prf.r, brute.r, 1e-15);
}

TEST(Overlap, MatchesBruteForceOnRandomMasks) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 150; ++trial) {
    const auto pred = random_mask(12, 14, 1 + trial % 5, rng);
    const auto truth = random_mask(12, 14, 1 + (trial / 5) % 5, rng);
    const auto got = overlap_prf(pred, truth);
    const auto want = oracle::brute_overlap(pred, truth);
    EXPECT_NEAR(got.p, want.p, 1e-12) << trial;
    EXPECT_NEAR(got.r, want.r, 1e-12) << trial;
    EXPECT_NEAR(got.f, want.f, 1e-12) << trial;
  }
}

TEST(Overlap, SwapExchangesPrecisionAndRecall) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_mask(10, 10, 1 + trial % 4, rng);
    const auto b = random_mask(10, 10, 1 + trial % 3, rng);
    const auto ab = overlap_prf(a, b), ba = overlap_prf(b, a);
    EXPECT_DOUBLE_EQ(ab.p, ba.r);
    EXPECT_DOUBLE_EQ(ab.r, ba.p);
    EXPECT_DOUBLE_EQ(ab.f, ba.f);
  }
}

TEST(Metrics, InvariantToLabelPermutationAndInRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = random_mask(16, 16, 4, rng);
    const auto truth = random_mask(16, 16, 3, rng);
    std::vector<Label> map{0, 1, 2, 3, 4};
    std::shuffle(map.begin() + 1, map.end(), rng);
    for (auto& v : map)
      if (v) v += 10;
    const auto base = evaluate(pred, truth);
    const auto moved = evaluate(relabel(pred, map), relabel(truth, map));
    EXPECT_DOUBLE_EQ(base.overlap.f, moved.overlap.f);
    EXPECT_DOUBLE_EQ(base.boundary.f, moved.boundary.f);
    EXPECT_DOUBLE_EQ(base.pct75, moved.pct75);
    for (const Prf& m : {base.overlap, base.boundary}) {
      EXPECT_GE(m.p, 0.0);
      EXPECT_LE(m.p, 1.0);
      EXPECT_GE(m.r, 0.0);
      EXPECT_LE(m.r, 1.0);
      EXPECT_LE(m.f, (m.p + m.r) / 2 + 1e-15);
    }
    EXPECT_GE(base.pct75, 0.0);
    EXPECT_LE(base.pct75, 100.0);
    const auto self = overlap_prf(pred, pred);
    EXPECT_EQ(self.f, 1.0);
  }
}

TEST(BoundaryPixels, RectangleRing) {
  std::vector<int> members;
  for (int r = 2; r < 6; ++r)
    for (int c = 3; c < 8; ++c) members.push_back(r * 10 + c);
  EXPECT_EQ(boundary_pixels(members, 10, 10).size(), 14u);  // 4x5 ring
  std::set<int> s(members.begin(), members.end());
  const auto b = boundary_pixels(members, 10, 10);
  EXPECT_EQ(std::set<int>(b.begin(), b.end()), oracle::boundary(s, 10, 10));
}

TEST(Boundary, IdenticalIsPerfectAtAnyTolerance) {
  LabelMask m(16, 16, 0);
  fill_rect(m, 2, 2, 9, 7, 1);
  fill_rect(m, 9, 8, 15, 15, 2);
  for (double tol : {0.0, 1.0, 2.5}) {
    const auto b = boundary_prf(m, m, tol);
    EXPECT_EQ(b.f, 1.0);
  }
}

TEST(Boundary, OnePixelShiftWithinTolerance) {
  LabelMask truth(30, 30, 0), pred(30, 30, 0);
  fill_rect(truth, 10, 10, 20, 20, 1);
  fill_rect(pred, 10, 11, 20, 21, 1);
  EXPECT_EQ(boundary_prf(pred, truth, 1.0).f, 1.0);
  EXPECT_LT(boundary_prf(pred, truth, 0.0).f, 1.0);
}

TEST(Boundary, ThreePixelShiftMatchesPixelSetOracle) {
  LabelMask truth(30, 30, 0), pred(30, 30, 0);
  fill_rect(truth, 8, 6, 20, 22, 1);
  fill_rect(pred, 8, 9, 20, 25, 1);
  const auto to = oracle::objects(truth), po = oracle::objects(pred);
  const auto tb = oracle::boundary(to[0], 30, 30), pb = oracle::boundary(po[0], 30, 30);
  const double p = static_cast<double>(oracle::near_count(pb, tb, 30, 1.0)) / pb.size();
  const double r = static_cast<double>(oracle::near_count(tb, pb, 30, 1.0)) / tb.size();
  const auto got = boundary_prf(pred, truth, 1.0);
  EXPECT_NEAR(got.p, p, 1e-15);
  EXPECT_NEAR(got.r, r, 1e-15);
  EXPECT_NEAR(got.f, oracle::f_measure(p, r), 1e-15);
  EXPECT_LT(got.f, 1.0);
}

TEST(Boundary, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 60; ++trial) {
    // One object per side keeps the matching trivial for the oracle.
    const auto pred = random_mask(14, 14, 1, rng);
    const auto truth = random_mask(14, 14, 1, rng);
    const auto po = oracle::objects(pred), to = oracle::objects(truth);
    const auto got = boundary_prf(pred, truth, 1.5);
    if (oracle::intersection(po[0], to[0]) == 0) {
      EXPECT_EQ(got.f, 0.0);
      continue;
    }
    const auto pb = oracle::boundary(po[0], 14, 14), tb = oracle::boundary(to[0], 14, 14);
    EXPECT_NEAR(got.p, static_cast<double>(oracle::near_count(pb, tb, 14, 1.5)) / pb.size(), 1e-15);
    EXPECT_NEAR(got.r, static_cast<double>(oracle::near_count(tb, pb, 14, 1.5)) / tb.size(), 1e-15);
  }
}

TEST(Percent75, Examples) {
  EXPECT_EQ(percent_75({1.0, 1.0}, 2), 100.0);
  EXPECT_EQ(percent_75({}, 3), 0.0);
  EXPECT_NEAR(percent_75({0.8, 0.74, 0.76}, 3), 200.0 / 3.0, 1e-12);
  EXPECT_EQ(percent_75({}, 0), 100.0);
  EXPECT_EQ(evaluate(LabelMask(4, 4, 0), LabelMask(4, 4, 0)).pct75, 100.0);
}

TEST(Aggregate, Examples) {
  LabelMask m(8, 8, 0);
  fill_rect(m, 1, 1, 5, 5, 1);
  const auto r = evaluate(m, m);
  const auto one = aggregate({r});
  EXPECT_EQ(one.overlap.f, r.overlap.f);
  EXPECT_EQ(one.pct75, r.pct75);
  const auto two = aggregate({r, r});
  EXPECT_EQ(two.overlap.p, r.overlap.p);
  EXPECT_EQ(two.boundary.f, r.boundary.f);

  EvalReport a, b;
  a.overlap.p = 1.0;
  b.overlap.p = 0.0;
  EXPECT_EQ(aggregate({a, b}).overlap.p, 0.5);
  EXPECT_THROW(aggregate({}), InputError);
}

TEST(Aggregate, PooledWeightsByArea) {
  LabelMask truth(10, 10, 0), big(10, 10, 0), small_truth(10, 10, 0), small_pred(10, 10, 0);
  fill_rect(truth, 0, 0, 8, 8, 1);
  fill_rect(big, 0, 0, 8, 8, 1);
  fill_rect(small_truth, 0, 0, 2, 2, 1);
  fill_rect(small_pred, 0, 0, 2, 4, 1);
  const auto r1 = evaluate(big, truth), r2 = evaluate(small_pred, small_truth);
  EXPECT_DOUBLE_EQ(aggregate({r1, r2}).overlap.p, 0.75);
  EXPECT_DOUBLE_EQ(aggregate({r1, r2}, Aggregation::kPooled).overlap.p, 68.0 / 72.0);
}

TEST(Report, CsvFieldOrder) {
  EXPECT_EQ(report_csv_header(),
            "image,overlap_p,overlap_r,overlap_f,boundary_p,boundary_r,boundary_f,pct75,num_pred,num_truth");
  EvalReport r;
  r.overlap = {1, 0.5, 2.0 / 3.0};
  r.num_pred = 2;
  r.num_truth = 3;
  r.pct75 = 50;
  EXPECT_EQ(report_csv_row("x", r), "x,1.000000,0.500000,0.666667,0.000000,0.000000,0.000000,50.0000,2,3");
  EXPECT_NE(report_text(r).find("pct75"), std::string::npos);
}
