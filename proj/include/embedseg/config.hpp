#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "embedseg/embedder.hpp"
#include "embedseg/meanshift.hpp"
#include "embedseg/metric_loss.hpp"
#include "embedseg/metrics.hpp"
#include "embedseg/refine.hpp"
#include "embedseg/synth.hpp"

namespace embedseg {

/// Flat `section.key=value` text, one entry per line, `#` starts a comment.
/// Later assignments replace earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<text>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void set_assignment(const std::string& assignment);
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct RunConfig {
  std::uint64_t seed = 1;  // default for every module seed not set explicitly
  int workers = 1;

  SceneSpec scene;
  int gen_count = 200;
  std::uint64_t gen_first_index = 0;

  LossConfig loss;
  EmbedderConfig embedder;
  EmbedderConfig roi_embedder;  // copy of `embedder` with seed + 1, then roi.* keys apply
  MeanShiftConfig meanshift;
  RefineConfig refine;          // refine.meanshift copies `meanshift`, then refine.* keys apply

  double boundary_tolerance = 1.0;
  Aggregation aggregation = Aggregation::kPerImageMean;
  std::string pred_suffix = "_pred.png";
  std::string truth_suffix = "_label.png";
};

/// Builds a RunConfig from defaults plus the given entries. Unknown keys and
/// malformed values raise ConfigError.
RunConfig make_run_config(const KeyValueConfig& kv);

/// Every recognized key with its effective value, one `key=value` per line.
std::string describe(const RunConfig& rc);

/// Only the scene.* lines of describe().
std::string describe_scene(const SceneSpec& spec);

}  // namespace embedseg
