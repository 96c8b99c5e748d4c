#include "embedseg/meanshift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "embedseg/parallel.hpp"

namespace embedseg {

void MeanShiftConfig::validate() const {
  if (!(kappa > 0.0)) throw InputError("MeanShiftConfig: kappa must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputError("MeanShiftConfig: epsilon must lie in (0,1)");
  if (seeds < 1 || iterations < 1) throw InputError("MeanShiftConfig: seeds and iterations must be >= 1");
  if (min_cluster_size < 0) throw InputError("MeanShiftConfig: min_cluster_size must be >= 0");
}

namespace {

template <class T>
Matrix<double> to_double(const Matrix<T>& x) {
  if constexpr (std::is_same_v<T, double>) {
    return x;
  } else {
    Matrix<double> out(x.rows(), x.cols());
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    return out;
  }
}

std::vector<double> normalized_sum(const Matrix<double>& x, std::span<const int> members) {
  std::vector<double> s(x.cols(), 0.0);
  for (int i : members) {
    const auto r = x.row(i);
    for (int c = 0; c < x.cols(); ++c) s[c] += r[c];
  }
  normalize_in_place(std::span<double>(s));
  return s;
}

double dot_row(std::span<const double> a, const double* b, int n) {
  double s = 0.0;
  for (int c = 0; c < n; ++c) s += a[c] * b[c];
  return s;
}

}  // namespace

template <class T>
Matrix<double> furthest_point_seeds(const Matrix<T>& x_in, int m, std::uint64_t seed, FirstSeed first) {
  const int n = x_in.rows();
  if (n < 1) throw InputError("furthest_point_seeds: empty input");
  m = std::clamp(m, 1, n);
  const Matrix<double> x = to_double(x_in);
  const int cols = x.cols();

  int pick = 0;
  if (first == FirstSeed::kRandom) {
    std::mt19937_64 rng(seed);
    pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
  } else {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    const auto mean = normalized_sum(x, all);
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = 0.5 * (1.0 - dot_row(mean, x.row(i).data(), cols));
      if (d > best) {
        best = d;
        pick = i;
      }
    }
  }

  Matrix<double> seeds(m, cols);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  for (int s = 0; s < m; ++s) {
    std::copy(x.row(pick).begin(), x.row(pick).end(), seeds.row(s).begin());
    const auto chosen = x.row(pick);
    int next = 0;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = 0.5 * (1.0 - dot_row(chosen, x.row(i).data(), cols));
      min_dist[i] = std::min(min_dist[i], d);
      if (min_dist[i] > far) {
        far = min_dist[i];
        next = i;
      }
    }
    pick = next;
  }
  return seeds;
}

template <class T>
Matrix<double> meanshift_iterate(const Matrix<T>& x_in, Matrix<double> seeds, const MeanShiftConfig& cfg) {
  cfg.validate();
  const Matrix<double> x = to_double(x_in);
  const int n = x.rows();
  const int cols = x.cols();
  if (seeds.cols() != cols) throw InputError("meanshift_iterate: seed width differs from data");

  parallel_for(seeds.rows(), cfg.workers, [&](int s) {
    std::vector<double> weight(n);
    std::vector<double> next(cols);
    auto mu = seeds.row(s);
    for (int t = 0; t < cfg.iterations; ++t) {
      double top = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        weight[i] = cfg.kappa * dot_row(mu, x.row(i).data(), cols);
        top = std::max(top, weight[i]);
      }
      // Subtracting the row maximum rescales W uniformly; normalization undoes it.
      std::fill(next.begin(), next.end(), 0.0);
      for (int i = 0; i < n; ++i) {
        const double w = std::exp(weight[i] - top);
        const double* r = x.row(i).data();
        for (int c = 0; c < cols; ++c) next[c] += w * r[c];
      }
      normalize_in_place(std::span<double>(next));
      std::copy(next.begin(), next.end(), mu.begin());
    }
  });
  return seeds;
}

Matrix<double> merge_centers(const Matrix<double>& centers, double epsilon, MergeRule rule) {
  Matrix<double> current = centers;
  for (;;) {
    const int k = current.rows();
    std::vector<int> parent(k);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    bool merged_any = false;
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        if (cosine_distance<double>(current.row(a), current.row(b)) < epsilon) {
          const int ra = find(a), rb = find(b);
          if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
          merged_any = true;
        }
      }
    }
    if (!merged_any) return current;

    std::vector<std::vector<int>> groups;
    std::vector<int> group_of(k, -1);
    for (int a = 0; a < k; ++a) {
      const int root = find(a);
      if (group_of[root] < 0) {
        group_of[root] = static_cast<int>(groups.size());
        groups.emplace_back();
      }
      groups[group_of[root]].push_back(a);
    }
    Matrix<double> next(0, current.cols());
    for (const auto& g : groups) {
      if (rule == MergeRule::kKeepFirst) {
        next.append_row(current.row(g.front()));
      } else {
        next.append_row(normalized_sum(current, g));
      }
    }
    // Means of merged groups can land within epsilon of each other; repeat.
    current = std::move(next);
  }
}

template <class T>
std::vector<int> assign_nearest(const Matrix<T>& x_in, const Matrix<double>& centers, int workers) {
  if (centers.rows() < 1) throw InputError("assign_nearest: no centers");
  const Matrix<double> x = to_double(x_in);
  std::vector<int> out(x.rows(), 0);
  const int cols = x.cols();
  parallel_for(x.rows(), workers, [&](int i) {
    const double* r = x.row(i).data();
    int best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < centers.rows(); ++c) {
      const double d = dot_row(centers.row(c), r, cols);
      if (d > best_dot) {
        best_dot = d;
        best = c;
      }
    }
    out[i] = best;
  });
  return out;
}

template <class T>
ClusterResult cluster(const Matrix<T>& x, const MeanShiftConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (x.rows() < 1) throw InputError("cluster: empty input");
  const auto seeds = furthest_point_seeds(x, cfg.seeds, seed, cfg.first_seed);
  const auto shifted = meanshift_iterate(x, seeds, cfg);
  Matrix<double> centers = merge_centers(shifted, cfg.epsilon, cfg.merge);
  std::vector<int> assignment = assign_nearest(x, centers, cfg.workers);

  auto count = [&](const std::vector<int>& a, int k) {
    std::vector<int> sizes(k, 0);
    for (int v : a) ++sizes[v];
    return sizes;
  };
  std::vector<int> sizes = count(assignment, centers.rows());

  // Dissolve undersized clusters; at least the largest one survives.
  std::vector<int> keep;
  for (int c = 0; c < centers.rows(); ++c) {
    if (sizes[c] >= cfg.min_cluster_size) keep.push_back(c);
  }
  if (keep.empty()) {
    keep.push_back(static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin()));
  }
  if (static_cast<int>(keep.size()) != centers.rows()) {
    Matrix<double> kept(0, centers.cols());
    for (int c : keep) kept.append_row(centers.row(c));
    centers = std::move(kept);
    assignment = assign_nearest(x, centers, cfg.workers);
  }
  // Empty clusters can remain when a center attracts no rows; drop them too.
  sizes = count(assignment, centers.rows());
  if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) {
    Matrix<double> kept(0, centers.cols());
    std::vector<int> remap(centers.rows(), -1);
    for (int c = 0; c < centers.rows(); ++c) {
      if (sizes[c] > 0) {
        remap[c] = kept.rows();
        kept.append_row(centers.row(c));
      }
    }
    for (int& a : assignment) a = remap[a];
    centers = std::move(kept);
    sizes = count(assignment, centers.rows());
  }
  return {std::move(centers), std::move(assignment), std::move(sizes)};
}

LabelMask segment_image(const EmbeddingGrid& embeddings, const MeanShiftConfig& cfg, std::uint64_t seed) {
  const int h = embeddings.height(), w = embeddings.width();
  const auto result = cluster(embeddings.as_rows(), cfg, seed);
  const int k = result.centers.rows();
  std::vector<int> border(k, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (r == 0 || c == 0 || r == h - 1 || c == w - 1) ++border[result.assignment[r * w + c]];
    }
  }
  const int background = static_cast<int>(std::max_element(border.begin(), border.end()) - border.begin());
  std::vector<Label> label_of(k);
  Label next = 1;
  for (int c = 0; c < k; ++c) label_of[c] = c == background ? 0 : next++;
  LabelMask mask(h, w, 0);
  for (int i = 0; i < h * w; ++i) mask[i] = label_of[result.assignment[i]];
  return mask;
}

template Matrix<double> furthest_point_seeds<float>(const Matrix<float>&, int, std::uint64_t, FirstSeed);
template Matrix<double> furthest_point_seeds<double>(const Matrix<double>&, int, std::uint64_t, FirstSeed);
template Matrix<double> meanshift_iterate<float>(const Matrix<float>&, Matrix<double>, const MeanShiftConfig&);
template Matrix<double> meanshift_iterate<double>(const Matrix<double>&, Matrix<double>, const MeanShiftConfig&);
template std::vector<int> assign_nearest<float>(const Matrix<float>&, const Matrix<double>&, int);
template std::vector<int> assign_nearest<double>(const Matrix<double>&, const Matrix<double>&, int);
template ClusterResult cluster<float>(const Matrix<float>&, const MeanShiftConfig&, std::uint64_t);
template ClusterResult cluster<double>(const Matrix<double>&, const MeanShiftConfig&, std::uint64_t);

}  // namespace embedseg
