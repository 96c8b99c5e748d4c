#include "embedseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <numeric>
#include <random>

#include "embedseg/parallel.hpp"

namespace embedseg {

void adam_step(std::vector<std::span<float>> params, const ParamSet<float>& grads, AdamState& state,
               double learning_rate) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.f);
      state.v.emplace_back(p.size(), 0.f);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    const auto& g = grads[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(state.beta1 * m[i] + (1.0 - state.beta1) * gi);
      v[i] = static_cast<float>(state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      params[t][i] = static_cast<float>(params[t][i] - learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

std::vector<double> TrainResult::losses() const {
  std::vector<double> out;
  out.reserve(history.size());
  for (const auto& h : history) out.push_back(h.loss);
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = a * 0x9e3779b97f4a7c15ULL;
  h ^= b + 0x7f4a7c159e3779b9ULL + (h << 6) + (h >> 2);
  h ^= c + 0x94d049bb133111ebULL + (h << 6) + (h >> 2);
  return h;
}

std::string divergence_report(const EmbedderModel& model, long step, int epoch, std::size_t sample,
                              const StepRecord& rec) {
  std::string msg;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "non-finite loss at step %ld (epoch %d, sample %zu): total=%g intra=%g inter=%g\n", step, epoch,
                sample, rec.loss, rec.intra, rec.inter);
  msg += buf;
  const auto params = model.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    double sq = 0.0;
    for (float v : params[t]) sq += static_cast<double>(v) * v;
    std::snprintf(buf, sizeof buf, "  param[%zu] size=%zu norm=%g\n", t, params[t].size(), std::sqrt(sq));
    msg += buf;
  }
  return msg;
}

struct SampleResult {
  LossValue loss;
  ParamSet<float> grads;
};

}  // namespace

TrainResult train(EmbedderModel& model, std::span<const LabeledFrame> data, const LossConfig& loss,
                  const EmbedderConfig& schedule, const TrainOptions& options) {
  if (data.empty()) throw InputError("train: empty dataset");
  loss.validate();
  schedule.validate();
  if (options.fit_stats) {
    std::vector<const RgbdFrame*> frames;
    for (const auto& d : data) frames.push_back(&d.frame);
    model.stats = fit_input_stats(frames);
  }

  const int n = static_cast<int>(data.size());
  const int batch = std::min(schedule.batch_size, n);
  AdamState adam;
  TrainResult result;
  std::vector<int> order(n);
  long step = 0;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(schedule.seed, static_cast<std::uint64_t>(epoch), 0xe9));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[std::uniform_int_distribution<int>(0, i)(rng)]);
    }
    for (int start = 0; start < n; start += batch) {
      const int count = std::min(batch, n - start);
      std::vector<SampleResult> slots(count);
      parallel_for(count, options.workers, [&](int b) {
        const auto& sample = data[order[start + b]];
        Activations<float> cache;
        const auto raw = model.forward_raw(sample.frame, &cache);
        LossConfig lc = loss;
        lc.seed = mix_seed(loss.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b));
        auto lg = total_loss_and_grad(raw.cast<double>(), sample.truth, lc);
        slots[b].grads = model.backward(cache, lg.grad.cast<float>());
        slots[b].loss = std::move(lg.loss);
        // Normalization would silently map NaN/inf outputs to e1; count them as divergence.
        const auto v = raw.values();
        if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
          slots[b].loss.total = std::numeric_limits<double>::quiet_NaN();
        }
      });

      StepRecord rec{step, epoch, 0.0, 0.0, 0.0};
      ParamSet<float> grads = model.zeros_like();
      for (int b = 0; b < count; ++b) {
        rec.loss += slots[b].loss.total / count;
        rec.intra += slots[b].loss.intra / count;
        rec.inter += slots[b].loss.inter / count;
        for (std::size_t t = 0; t < grads.size(); ++t) {
          for (std::size_t i = 0; i < grads[t].size(); ++i) grads[t][i] += slots[b].grads[t][i] / count;
        }
      }
      if (!std::isfinite(rec.loss)) {
        throw TrainingDiverged(divergence_report(model, step, epoch, static_cast<std::size_t>(order[start]), rec),
                               step);
      }
      adam_step(model.parameters(), grads, adam, schedule.learning_rate);
      result.history.push_back(rec);
      if (options.on_step) options.on_step(rec);
      ++step;
    }
  }
  return result;
}

TrainResult train_roi_model(EmbedderModel& model, std::span<const LabeledFrame> scenes, const LossConfig& loss,
                            const EmbedderConfig& schedule, const RefineConfig& refine,
                            const TrainOptions& options) {
  const auto rois = build_roi_dataset(scenes, refine);
  if (rois.empty()) throw InputError("train_roi_model: scenes contain no objects");
  return train(model, rois, loss, schedule, options);
}

}  // namespace embedseg
