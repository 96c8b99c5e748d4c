#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "embedseg/embedder.hpp"
#include "embedseg/metric_loss.hpp"
#include "embedseg/refine.hpp"

namespace embedseg {

/// Adaptive-moment optimizer state with bias-corrected moments.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  ParamSet<float> m, v;
};

void adam_step(std::vector<std::span<float>> params, const ParamSet<float>& grads, AdamState& state,
               double learning_rate);

/// Thrown when a step produces a non-finite loss; the message carries the
/// optimizer position and per-tensor parameter norms.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;   // batch mean of total loss
  double intra = 0.0;
  double inter = 0.0;
};

struct TrainOptions {
  int workers = 1;
  bool fit_stats = true;  // standardize XYZ on this dataset before training
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::vector<double> losses() const;
};

/// Mini-batch training with the metric loss. Uses learning_rate, epochs,
/// batch_size and seed from `schedule`. Deterministic for a fixed seed and
/// any worker count.
TrainResult train(EmbedderModel& model, std::span<const LabeledFrame> data, const LossConfig& loss,
                  const EmbedderConfig& schedule, const TrainOptions& options = {});

/// Same contract as train, on RoI crops of the ground-truth objects.
TrainResult train_roi_model(EmbedderModel& model, std::span<const LabeledFrame> scenes, const LossConfig& loss,
                            const EmbedderConfig& schedule, const RefineConfig& refine,
                            const TrainOptions& options = {});

}  // namespace embedseg
