#include "embedseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "embedseg/parallel.hpp"
#include "embedseg/synth.hpp"

namespace embedseg {

std::vector<LabeledFrame> generate_dataset(const SceneSpec& spec, std::uint64_t first, int count, int workers) {
  spec.validate();
  if (count < 0) throw InputError("generate_dataset: negative count");
  std::vector<LabeledFrame> out(count);
  parallel_for(count, workers, [&](int i) { out[i] = generate_scene(spec, first + static_cast<std::uint64_t>(i)); });
  return out;
}

std::uint64_t seed_for(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

EmbeddingGrid oracle_embeddings(const LabelMask& truth, int dim, std::uint64_t seed) {
  if (dim < 2) throw InputError("oracle_embeddings: dim must be >= 2");
  const Label k = max_label(truth);
  // Orthonormalized while there are dimensions left, so painted objects sit
  // at cosine distance 0.5 from each other.
  std::vector<std::vector<double>> colors;
  for (Label id = 0; id <= k; ++id) {
    auto v = random_unit_vector(dim, seed + static_cast<std::uint64_t>(id));
    if (id < dim) {
      for (const auto& u : colors) {
        double p = 0.0;
        for (int d = 0; d < dim; ++d) p += u[d] * v[d];
        for (int d = 0; d < dim; ++d) v[d] -= p * u[d];
      }
      double n = 0.0;
      for (double x : v) n += x * x;
      for (double& x : v) x /= std::sqrt(n);
    }
    colors.push_back(std::move(v));
  }
  EmbeddingGrid out(truth.height(), truth.width(), dim);
  for (int i = 0; i < out.pixels(); ++i) {
    auto px = out.pixel(i);
    const auto& c = colors[truth[i]];
    for (int d = 0; d < dim; ++d) px[d] = static_cast<float>(c[d]);
  }
  return out;
}

RoiEmbedder model_embedder(const EmbedderModel& model) {
  return [&model](const RgbdFrame& f) { return model.forward(f); };
}

SceneSegmentation segment_scene(const EmbeddingGrid& embeddings, const RgbdFrame& frame,
                                const EmbedderModel* roi_model, const RunConfig& rc, std::uint64_t seed) {
  SceneSegmentation out{segment_image(embeddings, rc.meanshift, seed), LabelMask(1, 1, 0)};
  if (roi_model) out.refined = refine_all(frame, out.stage_one, model_embedder(*roi_model), rc.refine, seed);
  return out;
}

DatasetEval evaluate_dataset(const EmbedderModel& model, const EmbedderModel* roi_model,
                             std::span<const LabeledFrame> scenes, const RunConfig& rc) {
  const int n = static_cast<int>(scenes.size());
  DatasetEval out;
  out.stage_one.resize(n);
  if (roi_model) out.refined.resize(n);
  // Scenes run concurrently, so clustering inside each one stays serial.
  RunConfig serial = rc;
  serial.meanshift.workers = serial.refine.meanshift.workers = 1;
  parallel_for(n, rc.workers, [&](int i) {
    const auto& scene = scenes[i];
    const auto seg = segment_scene(model.forward(scene.frame), scene.frame, roi_model, serial,
                                   seed_for(rc.seed, std::to_string(i)));
    out.stage_one[i] = evaluate(seg.stage_one, scene.truth, rc.boundary_tolerance);
    if (roi_model) out.refined[i] = evaluate(seg.refined, scene.truth, rc.boundary_tolerance);
  });
  out.stage_one_total = aggregate(out.stage_one, rc.aggregation);
  if (roi_model) out.refined_total = aggregate(out.refined, rc.aggregation);
  return out;
}

double benchmark_clustering(int workers, int repeats, std::uint64_t seed) {
  VmfMixtureSpec spec;
  spec.dim = 16;
  spec.components = 4;
  spec.samples_per_component = 1024;
  spec.seed = seed;
  const auto mix = labeled_mixture(spec);
  EmbeddingGrid grid(64, 64, 16);
  for (int i = 0; i < grid.pixels(); ++i) {
    auto px = grid.pixel(i);
    const auto row = mix.rows.row(i);
    for (int d = 0; d < 16; ++d) px[d] = static_cast<float>(row[d]);
  }
  MeanShiftConfig cfg;
  cfg.workers = workers;
  std::vector<double> times;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto mask = segment_image(grid, cfg, seed);
    const auto t1 = std::chrono::steady_clock::now();
    if (mask.size() == 0) throw std::logic_error("empty segmentation");
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace embedseg
