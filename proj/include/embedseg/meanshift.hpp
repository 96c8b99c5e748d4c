#pragma once

#include <cstdint>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

enum class FirstSeed {
  kRandom,          // uniform random row
  kFarthestFromMean // row farthest from the dataset spherical mean
};

enum class MergeRule {
  kSingleLinkageMean,  // transitive groups replaced by their spherical mean
  kKeepFirst           // transitive groups represented by their lowest-index member
};

struct MeanShiftConfig {
  double kappa = 20.0;
  double epsilon = 0.04;  // merge threshold on cosine distance (2 * alpha)
  int seeds = 100;
  int iterations = 10;
  int min_cluster_size = 32;
  FirstSeed first_seed = FirstSeed::kRandom;
  MergeRule merge = MergeRule::kSingleLinkageMean;
  int workers = 1;

  void validate() const;
};

struct ClusterResult {
  Matrix<double> centers;       // unit rows, pairwise >= epsilon apart
  std::vector<int> assignment;  // per input row
  std::vector<int> sizes;       // per center
};

/// Greedy farthest-point traversal under cosine distance; rows of X.
template <class T>
Matrix<double> furthest_point_seeds(const Matrix<T>& x, int m, std::uint64_t seed,
                                    FirstSeed first = FirstSeed::kRandom);

/// Exactly `iterations` rounds of mu <- normalize(exp(kappa mu X^T) X).
template <class T>
Matrix<double> meanshift_iterate(const Matrix<T>& x, Matrix<double> seeds, const MeanShiftConfig& cfg);

/// Single-linkage grouping of centers closer than epsilon.
Matrix<double> merge_centers(const Matrix<double>& centers, double epsilon,
                             MergeRule rule = MergeRule::kSingleLinkageMean);

/// Index of the nearest center by cosine distance, ties to the lowest index.
template <class T>
std::vector<int> assign_nearest(const Matrix<T>& x, const Matrix<double>& centers, int workers = 1);

/// Seeds, iterate, merge, assign, then dissolve undersized clusters.
template <class T>
ClusterResult cluster(const Matrix<T>& x, const MeanShiftConfig& cfg, std::uint64_t seed);

/// Clusters all pixels; the cluster owning the most image-border pixels
/// becomes background 0, the rest are numbered 1.. by cluster index.
LabelMask segment_image(const EmbeddingGrid& embeddings, const MeanShiftConfig& cfg, std::uint64_t seed);

}  // namespace embedseg
