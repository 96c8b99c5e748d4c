#pragma once

#include <cstdint>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

enum class ShapeKind { kDisk, kBox, kTriangle };

/// Parameters of the toy tabletop generator. Objects are flat-topped prisms
/// viewed from above; the table is a (slightly tilted) plane.
struct SceneSpec {
  int height = 64;
  int width = 64;
  int min_objects = 3;
  int max_objects = 8;
  std::vector<ShapeKind> shapes{ShapeKind::kDisk, ShapeKind::kBox, ShapeKind::kTriangle};
  std::vector<Vec3f> palette{{0.85f, 0.20f, 0.15f}, {0.20f, 0.65f, 0.25f}, {0.20f, 0.35f, 0.85f},
                             {0.90f, 0.80f, 0.20f}, {0.60f, 0.30f, 0.70f}, {0.55f, 0.45f, 0.35f}};
  Vec3f table_color{0.55f, 0.45f, 0.35f};
  double table_depth = 1.0;     // meters along the optical axis
  double table_tilt = 0.01;     // max depth change across the image, meters
  double min_object_height = 0.02;
  double max_object_height = 0.20;
  double min_height_gap = 0.02;  // between objects of one scene
  int min_object_size = 5;       // radius / half-extent in pixels
  int max_object_size = 12;
  int min_visible_pixels = 40;
  int max_placement_attempts = 20;
  double rgb_noise = 0.05;       // uniform +- per channel
  double depth_noise = 0.002;    // gaussian sigma, meters
  double focal = 64.0;           // pixels; principal point at image center
  std::uint64_t seed = 1;

  void validate() const;
  CameraIntrinsics intrinsics() const;
};

using SyntheticScene = LabeledFrame;

/// Deterministic scene for (spec.seed, index).
SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t index);

/// Draws n samples from vMF(center, kappa) by Wood's rejection scheme for
/// the cosine component and a uniform tangent direction, rotated onto the
/// center with a Householder reflection.
Matrix<double> sample_vmf(std::span<const double> center, double kappa, int n, std::uint64_t seed);

/// Uniformly distributed unit vector.
std::vector<double> random_unit_vector(int dim, std::uint64_t seed);

struct VmfMixtureSpec {
  int dim = 16;
  int components = 3;
  double kappa = 50.0;
  int samples_per_component = 200;
  double min_center_distance = 0.4;  // cosine distance
  int max_center_attempts = 1000;
  std::uint64_t seed = 1;
};

struct LabeledMixture {
  Matrix<double> rows;      // unit rows, shuffled
  std::vector<int> labels;  // generating component per row
  Matrix<double> centers;
};

LabeledMixture labeled_mixture(const VmfMixtureSpec& spec);

}  // namespace embedseg
