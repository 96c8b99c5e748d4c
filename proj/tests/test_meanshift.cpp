#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "embedseg/meanshift.hpp"
#include "embedseg/synth.hpp"
#include "oracles.hpp"

using namespace embedseg;

namespace {

Matrix<double> rows_of(const std::vector<std::vector<double>>& v) {
  Matrix<double> m;
  for (const auto& r : v) m.append_row(r);
  return m;
}

std::vector<std::vector<double>> random_unit_rows(int n, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> out(n, std::vector<double>(c));
  for (auto& r : out) {
    for (auto& v : r) v = nd(rng);
    normalize_in_place<double>(r);
  }
  return out;
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [x, fx] = ab.emplace(a[i], b[i]);
    auto [y, fy] = ba.emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

int row_index(const Matrix<double>& x, std::span<const double> r) {
  for (int i = 0; i < x.rows(); ++i)
    if (std::equal(r.begin(), r.end(), x.row(i).begin())) return i;
  return -1;
}

}  // namespace

TEST(Seeds, SingleSeedIsARow) {
  const auto x = rows_of(random_unit_rows(20, 4, 1));
  const auto s = furthest_point_seeds(x, 1, 3);
  ASSERT_EQ(s.rows(), 1);
  EXPECT_GE(row_index(x, s.row(0)), 0);
}

TEST(Seeds, AntipodeFollowsFirstPick) {
  const auto x = rows_of({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}});
  // The farthest-from-mean mode picks e1 here: mean is (0,1,0) direction.
  const auto s = furthest_point_seeds(x, 2, 0, FirstSeed::kFarthestFromMean);
  EXPECT_EQ(row_index(x, s.row(0)), 0);
  EXPECT_EQ(row_index(x, s.row(1)), 1);
}

TEST(Seeds, ClampedToRowCount) {
  const auto x = rows_of(random_unit_rows(5, 3, 2));
  EXPECT_EQ(furthest_point_seeds(x, 100, 1).rows(), 5);
}

TEST(Seeds, MatchesBruteForceTraversal) {
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5 + trial % 46;
    const auto raw = random_unit_rows(n, 3 + trial % 5, 100 + trial);
    const auto x = rows_of(raw);
    const int m = 1 + trial % 12;
    const auto s = furthest_point_seeds(x, m, trial);
    const auto brute = oracle::farthest_points(raw, m, row_index(x, s.row(0)));
    ASSERT_EQ(s.rows(), static_cast<int>(brute.size()));
    for (int k = 0; k < s.rows(); ++k) EXPECT_EQ(row_index(x, s.row(k)), brute[k]) << "trial " << trial;

    // Greedy property: selected seeds are mutually at least as far apart as
    // any unselected row is from the selected set.
    double min_pair = 2;
    for (int a = 0; a < s.rows(); ++a)
      for (int b = a + 1; b < s.rows(); ++b)
        min_pair = std::min(min_pair, cosine_distance<double>(s.row(a), s.row(b)));
    for (int i = 0; i < n; ++i) {
      double to_set = 2;
      for (int k = 0; k < s.rows(); ++k) to_set = std::min(to_set, cosine_distance<double>(x.row(i), s.row(k)));
      if (s.rows() > 1) {
        EXPECT_LE(to_set, min_pair + 1e-12);
      }
    }
  }
}

TEST(Iterate, IdenticalRowsAreFixedPoint) {
  std::vector<double> v{0.6, 0.8, 0};
  const auto x = rows_of({v, v, v, v});
  MeanShiftConfig cfg;
  cfg.iterations = 1;
  const auto out = meanshift_iterate(x, rows_of({{1, 0, 0}, {0, 0, 1}}), cfg);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(out(s, c), v[c], 1e-12);
}

TEST(Iterate, SmallKappaGoesToGlobalMean) {
  const auto raw = random_unit_rows(40, 5, 8);
  const auto x = rows_of(raw);
  std::vector<double> mean(5, 0);
  for (const auto& r : raw)
    for (int c = 0; c < 5; ++c) mean[c] += r[c];
  normalize_in_place<double>(mean);
  MeanShiftConfig cfg;
  cfg.kappa = 1e-9;
  cfg.iterations = 1;
  const auto out = meanshift_iterate(x, rows_of({raw[0], raw[7]}), cfg);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(out(s, c), mean[c], 1e-6);
}

TEST(Iterate, SingleBlobCollapses) {
  VmfMixtureSpec spec;
  spec.components = 1;
  const auto m = labeled_mixture(spec);
  MeanShiftConfig cfg;
  const auto out = meanshift_iterate(m.rows, furthest_point_seeds(m.rows, 20, 4), cfg);
  for (int a = 0; a < out.rows(); ++a)
    for (int b = a + 1; b < out.rows(); ++b) EXPECT_LT(cosine_distance<double>(out.row(a), out.row(b)), cfg.epsilon);
}

TEST(Iterate, LargeKappaDoesNotOverflow) {
  const auto x = rows_of(random_unit_rows(30, 4, 5));
  MeanShiftConfig cfg;
  cfg.kappa = 5000;
  const auto out = meanshift_iterate(x, furthest_point_seeds(x, 5, 1), cfg);
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Merge, CloseCentersMerge) {
  std::vector<double> a{1, 0, 0}, b{std::cos(0.1), std::sin(0.1), 0};
  const double d = cosine_distance<double>(a, b);
  EXPECT_EQ(merge_centers(rows_of({a, b}), 2 * d).rows(), 1);
}

TEST(Merge, AntipodesSurvive) {
  EXPECT_EQ(merge_centers(rows_of({{1, 0}, {-1, 0}}), 0.04).rows(), 2);
}

TEST(Merge, ChainMergesTransitively) {
  // Consecutive angles 0.3 rad: d(c1,c2) = d(c2,c3) ~ 0.022 < 0.04, d(c1,c3) ~ 0.087.
  std::vector<std::vector<double>> c;
  for (double t : {0.0, 0.3, 0.6}) c.push_back({std::cos(t), std::sin(t), 0});
  ASSERT_GT(cosine_distance<double>(c[0], c[2]), 0.04);
  for (auto rule : {MergeRule::kSingleLinkageMean, MergeRule::kKeepFirst}) {
    const auto out = merge_centers(rows_of(c), 0.04, rule);
    EXPECT_EQ(out.rows(), 1);
  }
  // Transitive closure by brute force on random sets.
  for (int trial = 0; trial < 50; ++trial) {
    const auto raw = random_unit_rows(12, 2, 300 + trial);
    const double eps = 0.02;
    std::vector<int> comp(12);
    std::iota(comp.begin(), comp.end(), 0);
    for (bool changed = true; changed;) {
      changed = false;
      for (int a = 0; a < 12; ++a)
        for (int b = 0; b < 12; ++b)
          if (cosine_distance<double>(raw[a], raw[b]) < eps && comp[b] > comp[a]) {
            comp[b] = comp[a];
            changed = true;
          }
    }
    const std::set<int> groups(comp.begin(), comp.end());
    const auto out = merge_centers(rows_of(raw), eps, MergeRule::kKeepFirst);
    // Keep-first groups are exactly the closure when the representatives
    // (lowest member of each group) are themselves separated.
    bool reps_apart = true;
    for (int a : groups)
      for (int b : groups)
        if (a < b && cosine_distance<double>(raw[a], raw[b]) < eps) reps_apart = false;
    if (reps_apart) {
      ASSERT_EQ(out.rows(), static_cast<int>(groups.size()));
      int k = 0;
      for (int g : groups) EXPECT_EQ(row_index(rows_of(raw), out.row(k++)), g);
    } else {
      EXPECT_LT(out.rows(), static_cast<int>(groups.size()));
    }
    for (int a = 0; a < out.rows(); ++a)
      for (int b = a + 1; b < out.rows(); ++b) EXPECT_GE(cosine_distance<double>(out.row(a), out.row(b)), eps);
  }
}

TEST(Merge, OutputUnitAndSeparated) {
  const auto raw = random_unit_rows(60, 3, 9);
  const auto out = merge_centers(rows_of(raw), 0.1);
  for (int a = 0; a < out.rows(); ++a) {
    EXPECT_NEAR(std::sqrt(dot<double>(out.row(a), out.row(a))), 1.0, 1e-6);
    for (int b = a + 1; b < out.rows(); ++b) EXPECT_GE(cosine_distance<double>(out.row(a), out.row(b)), 0.1);
  }
}

TEST(Assign, TiesGoToLowestIndex) {
  const auto x = rows_of({{0, 1}});
  const auto centers = rows_of({{1, 0}, {-1, 0}});
  EXPECT_EQ(assign_nearest(x, centers)[0], 0);
  const auto dup = rows_of({{0.6, 0.8}, {0.6, 0.8}});
  EXPECT_EQ(assign_nearest(rows_of({{1, 0}}), dup)[0], 0);
}

TEST(Cluster, SingleRow) {
  const auto x = rows_of({{0, 0, 1}});
  const auto r = cluster(x, MeanShiftConfig{}, 1);
  EXPECT_EQ(r.centers.rows(), 1);
  EXPECT_EQ(r.assignment, std::vector<int>{0});
  EXPECT_EQ(r.sizes, std::vector<int>{1});
}

TEST(Cluster, RecoversWellSeparatedBlobs) {
  for (int k = 2; k <= 6; ++k) {
    for (std::uint64_t trial = 0; trial < 4; ++trial) {
      VmfMixtureSpec spec;
      spec.components = k;
      spec.seed = 1000 * k + trial;
      const auto m = labeled_mixture(spec);
      const auto r = cluster(m.rows, MeanShiftConfig{}, trial);
      EXPECT_EQ(r.centers.rows(), k) << "K=" << k << " trial " << trial;
      EXPECT_GE(oracle::matched_accuracy(r.assignment, m.labels), 0.99);
      for (int a = 0; a < r.centers.rows(); ++a) {
        EXPECT_NEAR(std::sqrt(dot<double>(r.centers.row(a), r.centers.row(a))), 1.0, 1e-6);
        for (int b = a + 1; b < r.centers.rows(); ++b)
          EXPECT_GE(cosine_distance<double>(r.centers.row(a), r.centers.row(b)), MeanShiftConfig{}.epsilon);
      }
    }
  }
}

TEST(Cluster, DuplicatesCoAssignedAndSizesConsistent) {
  VmfMixtureSpec spec;
  spec.components = 3;
  spec.kappa = 8;
  auto m = labeled_mixture(spec);
  Matrix<double> x = m.rows;
  for (int i = 0; i < 50; ++i) x.append_row(m.rows.row(i * 7));
  const auto r = cluster(x, MeanShiftConfig{}, 2);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(r.assignment[m.rows.rows() + i], r.assignment[i * 7]);
  std::vector<int> sizes(r.centers.rows(), 0);
  for (int a : r.assignment) ++sizes[a];
  EXPECT_EQ(sizes, r.sizes);
  for (int s : r.sizes) EXPECT_GE(s, MeanShiftConfig{}.min_cluster_size);
}

TEST(Cluster, DeterministicAndPermutationCovariant) {
  VmfMixtureSpec spec;
  spec.components = 4;
  spec.samples_per_component = 60;
  const auto m = labeled_mixture(spec);
  MeanShiftConfig cfg;
  cfg.first_seed = FirstSeed::kFarthestFromMean;
  const auto a = cluster(m.rows, cfg, 0);
  EXPECT_EQ(a.assignment, cluster(m.rows, cfg, 0).assignment);
  EXPECT_EQ(a.centers, cluster(m.rows, cfg, 0).centers);

  std::vector<int> perm(m.rows.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  Matrix<double> shuffled;
  for (int p : perm) shuffled.append_row(m.rows.row(p));
  const auto b = cluster(shuffled, cfg, 0);
  std::vector<int> back(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = b.assignment[i];
  EXPECT_TRUE(same_partition(a.assignment, back));
}

TEST(Cluster, WorkerCountDoesNotChangeResult) {
  VmfMixtureSpec spec;
  spec.components = 5;
  const auto m = labeled_mixture(spec);
  MeanShiftConfig one, four;
  four.workers = 4;
  const auto a = cluster(m.rows, one, 3), b = cluster(m.rows, four, 3);
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_EQ(a.assignment, b.assignment);
}

TEST(Cluster, RejectsBadConfig) {
  const auto x = rows_of({{1, 0}});
  MeanShiftConfig cfg;
  cfg.kappa = 0;
  EXPECT_THROW(cluster(x, cfg, 0), InputError);
  cfg = MeanShiftConfig{};
  cfg.epsilon = 1.0;
  EXPECT_THROW(cluster(x, cfg, 0), InputError);
  cfg = MeanShiftConfig{};
  cfg.iterations = 0;
  EXPECT_THROW(cluster(x, cfg, 0), InputError);
}

TEST(SegmentImage, ConstantMapIsOneLabel) {
  EmbeddingGrid f(16, 16, 4, 0.f);
  for (int i = 0; i < f.pixels(); ++i) f.pixel(i)[2] = 1.f;
  const auto mask = segment_image(f, MeanShiftConfig{}, 1);
  EXPECT_EQ(distinct_labels(mask), std::vector<Label>{0});
}

TEST(SegmentImage, PaintedTruthRecovered) {
  LabelMask truth(32, 32, 0);
  for (int r = 4; r < 12; ++r)
    for (int c = 4; c < 14; ++c) truth(r, c) = 1;
  for (int r = 18; r < 28; ++r)
    for (int c = 10; c < 26; ++c) truth(r, c) = 2;
  for (int r = 3; r < 11; ++r)
    for (int c = 20; c < 28; ++c) truth(r, c) = 3;
  EmbeddingGrid f(32, 32, 8, 0.f);
  for (int i = 0; i < f.pixels(); ++i) f.pixel(i)[truth[i]] = 1.f;
  const auto mask = segment_image(f, MeanShiftConfig{}, 4);
  EXPECT_TRUE(same_partition({mask.values().begin(), mask.values().end()},
                             {truth.values().begin(), truth.values().end()}));
  // Background keeps label 0 because it owns the border.
  for (int i = 0; i < f.pixels(); ++i)
    if (truth[i] == 0) {
      EXPECT_EQ(mask[i], 0);
    }
}
