#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embedseg/config.hpp"
#include "embedseg/embedder.hpp"
#include "embedseg/metrics.hpp"

namespace embedseg {

/// Scenes first .. first+count-1 of the spec, generated in parallel.
std::vector<LabeledFrame> generate_dataset(const SceneSpec& spec, std::uint64_t first, int count, int workers);

/// Stable 64-bit mix of a seed and a name (FNV-1a over the name).
std::uint64_t seed_for(std::uint64_t seed, const std::string& name);

/// One random unit vector per label, painted over the mask.
EmbeddingGrid oracle_embeddings(const LabelMask& truth, int dim, std::uint64_t seed);

RoiEmbedder model_embedder(const EmbedderModel& model);

struct SceneSegmentation {
  LabelMask stage_one;
  LabelMask refined;  // empty (1x1) unless refinement ran
};

SceneSegmentation segment_scene(const EmbeddingGrid& embeddings, const RgbdFrame& frame,
                                const EmbedderModel* roi_model, const RunConfig& rc, std::uint64_t seed);

struct DatasetEval {
  std::vector<EvalReport> stage_one;
  std::vector<EvalReport> refined;  // empty without an RoI model
  EvalReport stage_one_total;
  EvalReport refined_total;
};

/// Segments and scores every scene; scene i uses seed_for(rc.seed, index i).
DatasetEval evaluate_dataset(const EmbedderModel& model, const EmbedderModel* roi_model,
                             std::span<const LabeledFrame> scenes, const RunConfig& rc);

/// Median wall time of stage-one clustering on a 64x64x16 vMF-mixture grid.
double benchmark_clustering(int workers, int repeats, std::uint64_t seed);

}  // namespace embedseg
