#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "embedseg/synth.hpp"
#include "embedseg/train.hpp"

using namespace embedseg;

namespace {

std::vector<std::vector<float>> snapshot(const EmbedderModel& m) {
  std::vector<std::vector<float>> out;
  for (auto p : m.parameters()) out.emplace_back(p.begin(), p.end());
  return out;
}

std::vector<LabeledFrame> scenes(int n, int size = 32) {
  SceneSpec spec;
  spec.height = spec.width = size;
  spec.max_objects = 4;
  spec.min_object_size = 4;
  spec.max_object_size = 7;
  std::vector<LabeledFrame> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_scene(spec, i));
  return out;
}

}  // namespace

TEST(Adam, BiasCorrectedFirstStep) {
  // With bias correction the first step moves each parameter by lr * sign(g).
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  ParamSet<float> g{{0.3f, -4.0f, 0.0f}};
  AdamState st;
  adam_step({std::span<float>(p)}, g, st, 0.1);
  EXPECT_NEAR(p[0], 0.9f, 1e-6);
  EXPECT_NEAR(p[1], -1.9f, 1e-6);
  EXPECT_EQ(p[2], 0.5f);
  EXPECT_EQ(st.step, 1);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto data = scenes(3);
  EmbedderConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  EmbedderModel model(cfg);
  const auto before = snapshot(model);
  const auto result = train(model, data, LossConfig{}, cfg);
  EXPECT_EQ(snapshot(model), before);
  EXPECT_EQ(result.history.size(), 4u);  // ceil(3/2) steps per epoch
}

TEST(Train, HistoryRecordedEveryStep) {
  const auto data = scenes(5);
  EmbedderConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  EmbedderModel model(cfg);
  int calls = 0;
  TrainOptions opts;
  opts.on_step = [&](const StepRecord&) { ++calls; };
  const auto r = train(model, data, LossConfig{}, cfg, opts);
  ASSERT_EQ(r.history.size(), 9u);
  EXPECT_EQ(calls, 9);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    EXPECT_EQ(r.history[i].step, static_cast<long>(i));
    EXPECT_EQ(r.history[i].epoch, static_cast<int>(i / 3));
    EXPECT_TRUE(std::isfinite(r.history[i].loss));
    EXPECT_NEAR(r.history[i].loss, r.history[i].intra + r.history[i].inter, 1e-12);
  }
}

TEST(Train, DeterministicAcrossRunsAndWorkerCounts) {
  const auto data = scenes(6);
  EmbedderConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  EmbedderModel a(cfg), b(cfg), c(cfg);
  const auto ra = train(a, data, LossConfig{}, cfg);
  const auto rb = train(b, data, LossConfig{}, cfg);
  TrainOptions four;
  four.workers = 4;
  const auto rc = train(c, data, LossConfig{}, cfg, four);
  EXPECT_EQ(ra.losses(), rb.losses());
  EXPECT_EQ(ra.losses(), rc.losses());
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(snapshot(a), snapshot(c));
}

TEST(Train, SingleSceneLossDropsTenfold) {
  SceneSpec spec;
  const std::vector<LabeledFrame> data{generate_scene(spec, 0)};
  EmbedderConfig cfg;
  cfg.epochs = 200;  // one step per epoch
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-3;
  EmbedderModel model(cfg);
  LossConfig lc;
  std::vector<const RgbdFrame*> frames{&data[0].frame};
  model.stats = fit_input_stats(frames);
  const double initial = total_loss(model.forward_raw(data[0].frame).cast<double>(), data[0].truth, lc).total;
  TrainOptions opts;
  opts.fit_stats = false;
  train(model, data, lc, cfg, opts);
  const double final_loss = total_loss(model.forward_raw(data[0].frame).cast<double>(), data[0].truth, lc).total;
  EXPECT_LT(final_loss, 0.1 * initial) << "initial " << initial << " final " << final_loss;
}

TEST(Train, NonFiniteLossAborts) {
  const auto data = scenes(2);
  EmbedderConfig cfg;
  cfg.epochs = 1;
  EmbedderModel model(cfg);
  model.towers()[0].layers[3].bias[0] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions opts;
  opts.fit_stats = false;
  try {
    train(model, data, LossConfig{}, cfg, opts);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0);
    EXPECT_NE(std::string(e.what()).find("param[0]"), std::string::npos);
  }
}

TEST(Train, EmptyDatasetRejected) {
  EmbedderModel model{EmbedderConfig{}};
  EXPECT_THROW(train(model, std::vector<LabeledFrame>{}, LossConfig{}, EmbedderConfig{}), InputError);
}

TEST(RoiTraining, DatasetNonEmptyAndModelIndependent) {
  const auto data = scenes(2, 64);
  RefineConfig rcfg;
  const auto rois = build_roi_dataset(data, rcfg);
  int objects = 0;
  for (const auto& s : data) objects += max_label(s.truth);
  EXPECT_EQ(static_cast<int>(rois.size()), objects);
  for (const auto& r : rois) {
    EXPECT_EQ(r.frame.height(), 64);
    EXPECT_GE(max_label(r.truth), 1);
  }

  EmbedderConfig whole_cfg, roi_cfg;
  whole_cfg.epochs = roi_cfg.epochs = 1;
  roi_cfg.seed = whole_cfg.seed + 1;
  EmbedderModel whole(whole_cfg), roi(roi_cfg);
  train(whole, data, LossConfig{}, whole_cfg);
  train_roi_model(roi, data, LossConfig{}, roi_cfg, rcfg);
  EXPECT_NE(snapshot(whole), snapshot(roi));
}
