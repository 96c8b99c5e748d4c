// embedseg: generate toy scenes, train, segment, refine, evaluate, visualize.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "embedseg/commands.hpp"

using namespace embedseg;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> fusion;
  std::vector<std::string> sets;
};

// File first, then --set, then the dedicated flags: later wins.
RunConfig resolve(const GlobalFlags& g, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  KeyValueConfig kv = g.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config);
  for (const auto& s : g.sets) kv.set_assignment(s);
  for (const auto& [k, v] : extra) kv.set(k, v);
  if (g.seed) kv.set("run.seed", std::to_string(*g.seed));
  if (g.workers) kv.set("run.workers", std::to_string(*g.workers));
  if (g.fusion) kv.set("embedder.fusion", *g.fusion);
  return make_run_config(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-embedding instance segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (run.seed)");
  app.add_option("--workers", g.workers, "worker threads (run.workers)");
  app.add_option("--fusion", g.fusion, "embedder fusion mode")
      ->check(CLI::IsMember({"early", "add", "concat", "rgb", "depth"}));
  app.add_option("--set", g.sets, "override a config key, key=value (repeatable)");

  std::string out;
  std::optional<int> count;
  std::optional<std::uint64_t> first_index;
  auto* gen = app.add_subcommand("gen", "generate synthetic tabletop scenes");
  gen->add_option("--out", out, "output scene directory")->required();
  gen->add_option("--count", count, "number of scenes (gen.count)");
  gen->add_option("--first-index", first_index, "index of the first scene (gen.first_index)");

  std::string scenes, models;
  auto* train_cmd = app.add_subcommand("train", "train the whole-image and RoI embedders");
  train_cmd->add_option("--scenes", scenes, "scene directory")->required();
  train_cmd->add_option("--out", out, "checkpoint directory")->required();

  SegmentOptions seg_opts;
  auto* segment = app.add_subcommand("segment", "cluster embeddings into instance masks");
  segment->add_option("--scenes", scenes, "scene directory")->required();
  segment->add_option("--models", models, "checkpoint directory");
  segment->add_option("--out", out, "mask output directory")->required();
  segment->add_flag("--refine", seg_opts.refine, "also write zoom-in refined masks");
  segment->add_flag("--oracle", seg_opts.oracle, "paint embeddings from the truth masks instead of a model");
  segment->add_flag("--dump-embeddings", seg_opts.dump_embeddings, "write <scene>_embed.esegf");

  std::string pred_dir, truth_dir;
  std::optional<std::string> pred_suffix, truth_suffix;
  auto* eval = app.add_subcommand("eval", "score predicted masks against truth");
  eval->add_option("--pred", pred_dir, "predicted mask directory")->required();
  eval->add_option("--truth", truth_dir, "truth mask directory")->required();
  eval->add_option("--out", out, "report CSV path")->required();
  eval->add_option("--pred-suffix", pred_suffix, "predicted file suffix (eval.pred_suffix)");
  eval->add_option("--truth-suffix", truth_suffix, "truth file suffix (eval.truth_suffix)");

  VizRequest viz_req;
  std::string viz_embeddings, viz_labels, viz_model, viz_scenes;
  auto* viz = app.add_subcommand("viz", "render feature maps or label masks as PNG");
  viz->add_option("--embeddings", viz_embeddings, "embedding dump (.esegf)");
  viz->add_option("--labels", viz_labels, "label mask PNG");
  viz->add_option("--model", viz_model, "checkpoint to embed a scene with");
  viz->add_option("--scenes", viz_scenes, "scene directory (with --model)");
  viz->add_option("--scene", viz_req.scene, "scene name (with --model)");
  viz->add_option("--out", out, "output PNG")->required();

  int bench_workers = 4, repeats = 5;
  auto* bench = app.add_subcommand("bench", "time stage-one clustering on a 64x64x16 grid");
  bench->add_option("--bench-workers", bench_workers, "worker count to compare against 1")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", repeats, "timed repetitions (median reported)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  RunConfig rc;
  try {
    std::vector<std::pair<std::string, std::string>> extra;
    if (count) extra.push_back({"gen.count", std::to_string(*count)});
    if (first_index) extra.push_back({"gen.first_index", std::to_string(*first_index)});
    if (pred_suffix) extra.push_back({"eval.pred_suffix", *pred_suffix});
    if (truth_suffix) extra.push_back({"eval.truth_suffix", *truth_suffix});
    rc = resolve(g, extra);
    if (*segment && !seg_opts.oracle && models.empty()) throw ConfigError("segment: --models is required");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*gen) {
      const auto m = cmd_gen(rc, out);
      std::cout << "wrote " << m.count << " scenes to " << out << "\n";
    } else if (*train_cmd) {
      cmd_train(rc, scenes, out, std::cout);
    } else if (*segment) {
      cmd_segment(rc, scenes, models, out, seg_opts, std::cout);
    } else if (*eval) {
      const auto s = cmd_eval(rc, pred_dir, truth_dir, out, std::cout);
      if (!s.skipped.empty()) std::cerr << "warning: " << s.skipped.size() << " files skipped\n";
    } else if (*viz) {
      if (!viz_embeddings.empty()) viz_req.embeddings = viz_embeddings;
      if (!viz_labels.empty()) viz_req.labels = viz_labels;
      if (!viz_model.empty()) viz_req.model = viz_model;
      if (!viz_scenes.empty()) viz_req.scene_dir = viz_scenes;
      viz_req.out = out;
      try {
        cmd_viz(viz_req);
      } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
    } else if (*bench) {
      cmd_bench(rc, bench_workers, repeats, std::cout);
    }
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training diverged\n" << e.what();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
