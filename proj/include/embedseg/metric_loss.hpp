#pragma once

#include <cstdint>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

struct LossConfig {
  double alpha = 0.02;  // intra-cluster margin
  double delta = 0.5;   // inter-cluster margin
  double lambda_intra = 1.0;
  double lambda_inter = 1.0;
  int samples_per_object = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Sampled pixels of one object (background included as label 0).
struct SampledObject {
  Label label = 0;
  std::vector<int> pixels;  // flat indices r * W + c
  Matrix<double> vectors;   // unit embeddings at `pixels`, filled by gather_embeddings
};

struct SampledBatch {
  std::vector<SampledObject> objects;  // ascending label order
};

struct LossValue {
  double intra = 0.0;
  double inter = 0.0;
  double total = 0.0;
  Matrix<double> means;  // one spherical mean per object
};

/// Normalized sum of the rows; e1 when the sum vanishes.
std::vector<double> spherical_mean(const Matrix<double>& vectors);

/// Uniform sampling without replacement, min(N, |object|) pixels per label.
SampledBatch sample_pixels(const LabelMask& mask, int samples_per_object, std::uint64_t seed);

/// Copies the (normalized) embedding of each sampled pixel into the batch.
void gather_embeddings(SampledBatch& batch, const FeatureGrid<double>& embeddings);

double intra_loss(const SampledBatch& batch, const LossConfig& cfg);
double inter_loss(const Matrix<double>& means, const LossConfig& cfg);

/// Loss without gradient, evaluated on the normalized raw embeddings.
LossValue total_loss(const FeatureGrid<double>& raw, const LabelMask& mask, const LossConfig& cfg);

struct LossAndGrad {
  LossValue loss;
  FeatureGrid<double> grad;  // d total / d raw, same shape as raw
};

/// Loss of the normalized raw embeddings and its gradient with respect to the
/// raw (pre-normalization) values. Violator sets and active hinges are held
/// fixed; the spherical means are differentiated through.
LossAndGrad total_loss_and_grad(const FeatureGrid<double>& raw, const LabelMask& mask,
                                const LossConfig& cfg);

}  // namespace embedseg
