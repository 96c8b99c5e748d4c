#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "embedseg/config.hpp"
#include "embedseg/metrics.hpp"
#include "embedseg/train.hpp"

namespace embedseg {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.txt";
inline constexpr const char* kModelName = "model.eseg";
inline constexpr const char* kRoiModelName = "roi_model.eseg";
inline constexpr const char* kLossHistoryName = "loss_history.csv";

/// "scene_000042"
std::string scene_name(std::uint64_t index);

struct Manifest {
  int count = 0;
  std::vector<std::string> scenes;
};

/// Reads a scene directory's manifest; missing manifest means an incomplete
/// directory and raises.
Manifest read_manifest(const fs::path& dir);
std::vector<LabeledFrame> load_scene_dir(const fs::path& dir, const Manifest& manifest, int workers);

/// Writes rc.gen_count scenes starting at rc.gen_first_index, then the manifest.
Manifest cmd_gen(const RunConfig& rc, const fs::path& out_dir);

struct TrainOutcome {
  TrainResult whole;
  TrainResult roi;
};

/// Trains the whole-image and RoI models on a scene directory; writes both
/// checkpoints and the per-step loss history.
TrainOutcome cmd_train(const RunConfig& rc, const fs::path& scene_dir, const fs::path& out_dir, std::ostream& log);

struct SegmentOptions {
  bool refine = false;
  bool oracle = false;           // embeddings painted from the truth masks; no model
  bool dump_embeddings = false;  // <name>_embed.esegf
};

/// Writes <name>_pred.png (and <name>_refined.png with refine) per scene.
void cmd_segment(const RunConfig& rc, const fs::path& scene_dir, const fs::path& model_dir, const fs::path& out_dir,
                 const SegmentOptions& opts, std::ostream& log);

struct EvalSummary {
  std::vector<std::pair<std::string, EvalReport>> images;
  EvalReport total;
  std::vector<std::string> skipped;  // unmatched files, either side
};

/// Pairs <key><pred_suffix> in pred_dir with <key><truth_suffix> in truth_dir,
/// scores each pair and writes a CSV with an "aggregate" last row.
EvalSummary cmd_eval(const RunConfig& rc, const fs::path& pred_dir, const fs::path& truth_dir,
                     const fs::path& out_csv, std::ostream& log);

struct VizRequest {
  std::optional<fs::path> embeddings;  // .esegf dump
  std::optional<fs::path> labels;      // 16-bit label PNG
  std::optional<fs::path> model;       // with scene_dir + scene
  std::optional<fs::path> scene_dir;
  std::string scene;
  fs::path out;
};

void cmd_viz(const VizRequest& req);

struct BenchReport {
  double single_seconds = 0.0;
  double multi_seconds = 0.0;
  int multi_workers = 4;
  bool scaling_measurable = false;  // enough hardware threads for the worker count
};

BenchReport cmd_bench(const RunConfig& rc, int workers, int repeats, std::ostream& log);

}  // namespace embedseg
