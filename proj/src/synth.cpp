#include "embedseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace embedseg {

namespace {

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

struct PlacedObject {
  ShapeKind shape;
  double cr, cc;  // center row / col
  double size;
  double angle;   // triangle orientation
  double height;
  Vec3f color;
};

bool covers(const PlacedObject& o, int r, int c) {
  const double dr = r + 0.5 - o.cr;
  const double dc = c + 0.5 - o.cc;
  switch (o.shape) {
    case ShapeKind::kDisk:
      return dr * dr + dc * dc <= o.size * o.size;
    case ShapeKind::kBox:
      return std::abs(dr) <= o.size && std::abs(dc) <= o.size * 0.75;
    case ShapeKind::kTriangle: {
      // Equilateral triangle inscribed in a circle of radius size * 1.2.
      const double rad = o.size * 1.2;
      for (int k = 0; k < 3; ++k) {
        const double a = o.angle + k * 2.0 * M_PI / 3.0;
        const double nx = std::cos(a), ny = std::sin(a);
        if (dc * nx + dr * ny > rad * 0.5) return false;
      }
      return true;
    }
  }
  return false;
}

// Visible label per pixel: the tallest covering object wins.
LabelMask render_labels(const SceneSpec& spec, const std::vector<PlacedObject>& objects) {
  LabelMask mask(spec.height, spec.width, 0);
  Grid2<double> top(spec.height, spec.width, -1.0);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    for (int r = 0; r < spec.height; ++r) {
      for (int c = 0; c < spec.width; ++c) {
        if (covers(objects[k], r, c) && objects[k].height > top(r, c)) {
          top(r, c) = objects[k].height;
          mask(r, c) = static_cast<Label>(k + 1);
        }
      }
    }
  }
  return mask;
}

std::vector<int> label_counts(const LabelMask& mask, int k) {
  std::vector<int> counts(k + 1, 0);
  for (Label v : mask.values()) ++counts[v];
  return counts;
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 8 || width < 8) throw InputError("SceneSpec: image must be at least 8x8");
  if (min_objects < 1 || max_objects < min_objects || max_objects > 12) {
    throw InputError("SceneSpec: object count range must satisfy 1 <= min <= max <= 12");
  }
  if (shapes.empty() || palette.empty()) throw InputError("SceneSpec: empty shape or color palette");
  if (!(min_object_height > 0.0) || max_object_height < min_object_height) {
    throw InputError("SceneSpec: invalid object height range");
  }
  if (min_object_size < 1 || max_object_size < min_object_size) {
    throw InputError("SceneSpec: invalid object size range");
  }
  if (!(table_depth > max_object_height + std::abs(table_tilt))) {
    throw InputError("SceneSpec: objects would reach the camera");
  }
  if (min_visible_pixels < 16) throw InputError("SceneSpec: min_visible_pixels must be >= 16");
  if (!(focal > 0.0)) throw InputError("SceneSpec: focal must be positive");
}

CameraIntrinsics SceneSpec::intrinsics() const {
  return {focal, focal, (width - 1) / 2.0, (height - 1) / 2.0};
}

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng = make_rng(spec.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto pick = [&](std::size_t n) {
    return std::min(static_cast<std::size_t>(unit(rng) * n), n - 1);
  };

  const int wanted = spec.min_objects + static_cast<int>(pick(spec.max_objects - spec.min_objects + 1));

  // Heights are distinct by at least min_height_gap when the range allows it.
  std::vector<double> heights;
  for (int k = 0; k < wanted; ++k) {
    double h = uniform(spec.min_object_height, spec.max_object_height);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const bool clear = std::all_of(heights.begin(), heights.end(), [&](double o) {
        return std::abs(o - h) >= spec.min_height_gap;
      });
      if (clear) break;
      h = uniform(spec.min_object_height, spec.max_object_height);
    }
    heights.push_back(h);
  }

  std::vector<PlacedObject> objects;
  for (int k = 0; k < wanted; ++k) {
    const ShapeKind shape = spec.shapes[pick(spec.shapes.size())];
    const Vec3f color = spec.palette[pick(spec.palette.size())];
    for (int attempt = 0; attempt < spec.max_placement_attempts; ++attempt) {
      PlacedObject o{shape,
                     uniform(0.0, spec.height),
                     uniform(0.0, spec.width),
                     uniform(spec.min_object_size, spec.max_object_size),
                     uniform(0.0, 2.0 * M_PI),
                     heights[k],
                     color};
      auto trial = objects;
      trial.push_back(o);
      const auto counts = label_counts(render_labels(spec, trial), static_cast<int>(trial.size()));
      const bool visible = std::all_of(counts.begin() + 1, counts.end(),
                                       [&](int n) { return n >= spec.min_visible_pixels; });
      if (visible) {
        objects = std::move(trial);
        break;
      }
    }
  }

  const LabelMask truth = render_labels(spec, objects);

  // Table plane tilted along a random direction.
  const double tilt_angle = uniform(0.0, 2.0 * M_PI);
  const double tilt = uniform(-spec.table_tilt, spec.table_tilt);
  const double tr = std::sin(tilt_angle) * tilt / spec.height;
  const double tc = std::cos(tilt_angle) * tilt / spec.width;

  Grid2<Vec3f> rgb(spec.height, spec.width);
  Grid2<float> depth(spec.height, spec.width);
  std::uniform_real_distribution<double> rgb_noise(-spec.rgb_noise, spec.rgb_noise);
  std::normal_distribution<double> depth_noise(0.0, spec.depth_noise);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const Label id = truth(r, c);
      const double table = spec.table_depth + tr * (r - spec.height / 2.0) + tc * (c - spec.width / 2.0);
      const double h = id == 0 ? 0.0 : objects[id - 1].height;
      const Vec3f base = id == 0 ? spec.table_color : objects[id - 1].color;
      Vec3f px;
      for (int ch = 0; ch < 3; ++ch) {
        px[ch] = static_cast<float>(std::clamp(base[ch] + rgb_noise(rng), 0.0, 1.0));
      }
      rgb(r, c) = px;
      const double noise = spec.depth_noise > 0.0 ? depth_noise(rng) : 0.0;
      depth(r, c) = static_cast<float>(std::max(table - h + noise, 1e-3));
    }
  }

  SyntheticScene scene;
  scene.frame = make_frame(std::move(rgb), std::move(depth), spec.intrinsics());
  scene.truth = compact_labels(truth);
  return scene;
}

std::vector<double> random_unit_vector(int dim, std::uint64_t seed) {
  if (dim < 1) throw InputError("random_unit_vector: dim must be positive");
  Rng rng = make_rng(seed, 0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  do {
    for (double& x : v) x = normal(rng);
  } while (normalize_in_place(std::span<double>(v)) < 1e-12);
  return v;
}

Matrix<double> sample_vmf(std::span<const double> center, double kappa, int n, std::uint64_t seed) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InputError("sample_vmf: kappa must be positive");
  if (center.size() < 2) throw InputError("sample_vmf: dimension must be at least 2");
  if (n < 0) throw InputError("sample_vmf: negative sample count");
  const int p = static_cast<int>(center.size());
  std::vector<double> mu(center.begin(), center.end());
  normalize_in_place(std::span<double>(mu));

  Rng rng = make_rng(seed, 0xf15e);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double half = (p - 1) / 2.0;
  std::gamma_distribution<double> gamma(half, 1.0);

  const double pm1 = p - 1.0;
  // Rationalized form stays accurate for very large kappa.
  const double b = pm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + pm1 * pm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + pm1 * std::log(1.0 - x0 * x0);

  // Householder reflection taking e1 onto mu.
  std::vector<double> h(mu);
  h[0] -= 1.0;
  double hh = 0.0;
  for (double v : h) hh += v * v;
  const bool reflect = hh > 1e-24;

  Matrix<double> out(n, p);
  std::vector<double> x(p), tangent(p - 1);
  for (int s = 0; s < n; ++s) {
    double w = 0.0;
    for (;;) {
      const double g1 = gamma(rng), g2 = gamma(rng);
      const double z = g1 / (g1 + g2);
      w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
      const double u = unit(rng);
      if (kappa * w + pm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
    }
    do {
      for (double& t : tangent) t = normal(rng);
    } while (normalize_in_place(std::span<double>(tangent)) < 1e-12);
    const double radial = std::sqrt(std::max(0.0, 1.0 - w * w));
    x[0] = w;
    for (int i = 1; i < p; ++i) x[i] = radial * tangent[i - 1];
    if (reflect) {
      // H e1 = mu for H = I - 2 h h^T / |h|^2 with h = e1 - mu (sign irrelevant).
      double proj = 0.0;
      for (int i = 0; i < p; ++i) proj += h[i] * x[i];
      for (int i = 0; i < p; ++i) x[i] -= 2.0 * proj / hh * h[i];
    }
    normalize_in_place(std::span<double>(x));
    std::copy(x.begin(), x.end(), out.row(s).begin());
  }
  return out;
}

LabeledMixture labeled_mixture(const VmfMixtureSpec& spec) {
  if (spec.components < 1) throw InputError("labeled_mixture: need at least one component");
  if (!(spec.kappa > 0.0)) throw InputError("labeled_mixture: kappa must be positive");
  if (spec.dim < 2) throw InputError("labeled_mixture: dimension must be at least 2");

  LabeledMixture mix;
  mix.centers = Matrix<double>(0, spec.dim);
  std::uint64_t draw = 0;
  for (int k = 0; k < spec.components; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_center_attempts && !placed; ++attempt) {
      const auto cand = random_unit_vector(spec.dim, spec.seed * 0x9e3779b97f4a7c15ULL + draw++);
      bool ok = true;
      for (int j = 0; j < mix.centers.rows() && ok; ++j) {
        ok = cosine_distance<double>(cand, mix.centers.row(j)) >= spec.min_center_distance;
      }
      if (ok) {
        mix.centers.append_row(cand);
        placed = true;
      }
    }
    if (!placed) {
      throw ConfigError("labeled_mixture: could not place " + std::to_string(spec.components) +
                        " centers with separation " + std::to_string(spec.min_center_distance));
    }
  }

  const int n = spec.components * spec.samples_per_component;
  Matrix<double> grouped(n, spec.dim);
  std::vector<int> labels(n);
  for (int k = 0; k < spec.components; ++k) {
    const auto samples = sample_vmf(mix.centers.row(k), spec.kappa, spec.samples_per_component,
                                    spec.seed * 31 + static_cast<std::uint64_t>(k) + 1);
    for (int i = 0; i < spec.samples_per_component; ++i) {
      const int r = k * spec.samples_per_component + i;
      std::copy(samples.row(i).begin(), samples.row(i).end(), grouped.row(r).begin());
      labels[r] = k;
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(spec.seed, 0x5aff);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  mix.rows = Matrix<double>(n, spec.dim);
  mix.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    std::copy(grouped.row(order[i]).begin(), grouped.row(order[i]).end(), mix.rows.row(i).begin());
    mix.labels[i] = labels[order[i]];
  }
  return mix;
}

}  // namespace embedseg
