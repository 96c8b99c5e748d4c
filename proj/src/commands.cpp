#include "embedseg/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "embedseg/image_io.hpp"
#include "embedseg/parallel.hpp"
#include "embedseg/pipeline.hpp"
#include "embedseg/synth.hpp"

namespace embedseg {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string history_csv(const TrainOutcome& t) {
  std::string out = "model,step,epoch,loss,intra,inter\n";
  auto rows = [&](const char* name, const TrainResult& r) {
    for (const auto& h : r.history) {
      out += std::string(name) + "," + std::to_string(h.step) + "," + std::to_string(h.epoch) + "," +
             csv_number(h.loss) + "," + csv_number(h.intra) + "," + csv_number(h.inter) + "\n";
    }
  };
  rows("whole", t.whole);
  rows("roi", t.roi);
  return out;
}

EmbedderModel require_model(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
  return load_model(path);
}

}  // namespace

std::string scene_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06llu", static_cast<unsigned long long>(index));
  return buf;
}

Manifest read_manifest(const fs::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing manifest " + path.string() + " (incomplete scene directory?)");
  Manifest m;
  m.count = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("count=", 0) == 0) m.count = std::stoi(line.substr(6));
    if (line.rfind("scene=", 0) == 0) {
      std::istringstream fields(line.substr(6));
      std::string name;
      fields >> name;
      m.scenes.push_back(name);
    }
  }
  if (m.count != static_cast<int>(m.scenes.size())) {
    throw std::runtime_error(path.string() + ": scene count does not match listed scenes");
  }
  return m;
}

std::vector<LabeledFrame> load_scene_dir(const fs::path& dir, const Manifest& manifest, int workers) {
  std::vector<LabeledFrame> out(manifest.scenes.size());
  parallel_for(static_cast<int>(out.size()), workers, [&](int i) { out[i] = load_scene(dir, manifest.scenes[i]); });
  return out;
}

Manifest cmd_gen(const RunConfig& rc, const fs::path& out_dir) {
  ensure_dir(out_dir);
  // A stale manifest would vouch for a half-written directory.
  fs::remove(out_dir / kManifestName);
  Manifest m;
  m.count = rc.gen_count;
  for (int i = 0; i < rc.gen_count; ++i) m.scenes.push_back(scene_name(rc.gen_first_index + i));
  parallel_for(rc.gen_count, rc.workers, [&](int i) {
    save_scene(out_dir, m.scenes[i], generate_scene(rc.scene, rc.gen_first_index + i));
  });
  std::string text = "# scene manifest; depth PNG unit is 1 mm\n";
  text += "count=" + std::to_string(m.count) + "\n";
  text += "first_index=" + std::to_string(rc.gen_first_index) + "\n";
  text += describe_scene(rc.scene);
  for (const auto& name : m.scenes) {
    text += "scene=" + name + " " + name + "_rgb.png " + name + "_depth.png " + name + "_label.png " + name +
            "_intrinsics.txt\n";
  }
  write_text(out_dir / kManifestName, text);
  return m;
}

TrainOutcome cmd_train(const RunConfig& rc, const fs::path& scene_dir, const fs::path& out_dir, std::ostream& log) {
  const auto manifest = read_manifest(scene_dir);
  const auto scenes = load_scene_dir(scene_dir, manifest, rc.workers);
  ensure_dir(out_dir);
  log << "training on " << scenes.size() << " scenes from " << scene_dir.string() << "\n";

  TrainOutcome outcome;
  auto progress = [&log](const char* tag, const EmbedderConfig& cfg, const std::vector<StepRecord>& h) {
    return [&log, tag, &cfg, &h](const StepRecord& r) {
      if (h.empty() || h.back().epoch != r.epoch) {
        log << tag << " epoch " << r.epoch + 1 << "/" << cfg.epochs << " loss " << r.loss << "\n" << std::flush;
      }
    };
  };
  auto run = [&](const char* tag, const EmbedderConfig& cfg, TrainResult& result, auto&& train_fn) {
    TrainOptions opts;
    opts.workers = rc.workers;
    opts.on_step = [&, report = progress(tag, cfg, result.history)](const StepRecord& r) {
      report(r);
      result.history.push_back(r);
    };
    try {
      train_fn(opts);
    } catch (const TrainingDiverged&) {
      write_text(out_dir / kLossHistoryName, history_csv(outcome));
      throw;
    }
  };

  EmbedderModel whole(rc.embedder);
  run("whole", rc.embedder, outcome.whole,
      [&](const TrainOptions& o) { train(whole, scenes, rc.loss, rc.embedder, o); });
  save_model(whole, out_dir / kModelName);

  EmbedderModel roi(rc.roi_embedder);
  run("roi", rc.roi_embedder, outcome.roi,
      [&](const TrainOptions& o) { train_roi_model(roi, scenes, rc.loss, rc.roi_embedder, rc.refine, o); });
  save_model(roi, out_dir / kRoiModelName);

  write_text(out_dir / kLossHistoryName, history_csv(outcome));
  return outcome;
}

void cmd_segment(const RunConfig& rc, const fs::path& scene_dir, const fs::path& model_dir, const fs::path& out_dir,
                 const SegmentOptions& opts, std::ostream& log) {
  const auto manifest = read_manifest(scene_dir);
  std::optional<EmbedderModel> model, roi_model;
  if (!opts.oracle) model = require_model(model_dir / kModelName);
  if (opts.refine) roi_model = require_model(model_dir / kRoiModelName);
  ensure_dir(out_dir);

  RunConfig serial = rc;
  serial.meanshift.workers = serial.refine.meanshift.workers = 1;
  const int dim = model ? model->config().output_dim() : rc.embedder.output_dim();
  const int n = static_cast<int>(manifest.scenes.size());
  parallel_for(n, rc.workers, [&](int i) {
    const auto& name = manifest.scenes[i];
    const auto scene = load_scene(scene_dir, name);
    const std::uint64_t seed = seed_for(rc.seed, name);
    const auto embeddings = opts.oracle ? oracle_embeddings(scene.truth, dim, seed) : model->forward(scene.frame);
    if (opts.dump_embeddings) save_embeddings(out_dir / (name + "_embed.esegf"), embeddings);
    const auto seg = segment_scene(embeddings, scene.frame, roi_model ? &*roi_model : nullptr, serial, seed);
    save_label_png(out_dir / (name + "_pred.png"), seg.stage_one);
    if (roi_model) save_label_png(out_dir / (name + "_refined.png"), seg.refined);
  });
  log << "segmented " << n << " scenes into " << out_dir.string() << "\n";
}

EvalSummary cmd_eval(const RunConfig& rc, const fs::path& pred_dir, const fs::path& truth_dir,
                     const fs::path& out_csv, std::ostream& log) {
  auto keys = [](const fs::path& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string f = e.path().filename().string();
      if (e.is_regular_file() && f.size() > suffix.size() && f.ends_with(suffix)) {
        out[f.substr(0, f.size() - suffix.size())] = e.path();
      }
    }
    return out;
  };
  const auto preds = keys(pred_dir, rc.pred_suffix);
  const auto truths = keys(truth_dir, rc.truth_suffix);

  EvalSummary summary;
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> pairs;
  for (const auto& [k, p] : preds) {
    const auto it = truths.find(k);
    if (it == truths.end()) summary.skipped.push_back(p.filename().string());
    else pairs.push_back({k, {p, it->second}});
  }
  for (const auto& [k, t] : truths) {
    if (!preds.count(k)) summary.skipped.push_back(t.filename().string());
  }
  std::sort(summary.skipped.begin(), summary.skipped.end());
  for (const auto& s : summary.skipped) log << "warning: no counterpart for " << s << ", skipped\n";

  summary.images.resize(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), rc.workers, [&](int i) {
    const auto pred = load_label_png(pairs[i].second.first);
    const auto truth = load_label_png(pairs[i].second.second);
    if (!pred.same_shape(truth)) throw std::runtime_error("size mismatch for " + pairs[i].first);
    summary.images[i] = {pairs[i].first, evaluate(pred, truth, rc.boundary_tolerance)};
  });
  std::vector<EvalReport> reports;
  for (const auto& [k, r] : summary.images) reports.push_back(r);
  summary.total = aggregate(reports, rc.aggregation);

  std::string csv = report_csv_header() + "\n";
  for (const auto& [k, r] : summary.images) csv += report_csv_row(k, r) + "\n";
  csv += report_csv_row("aggregate", summary.total) + "\n";
  if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
  write_text(out_csv, csv);

  log << "evaluated " << summary.images.size() << " images, skipped " << summary.skipped.size() << "\n"
      << report_text(summary.total);
  return summary;
}

void cmd_viz(const VizRequest& req) {
  const int sources = req.embeddings.has_value() + req.labels.has_value() + req.model.has_value();
  if (sources != 1) throw InputError("viz: give exactly one of --embeddings, --labels, --model");
  if (req.labels) {
    write_png_rgb8(req.out, render_labels(load_label_png(*req.labels)));
    return;
  }
  if (req.embeddings) {
    write_png_rgb8(req.out, feature_map_image(load_embeddings(*req.embeddings)));
    return;
  }
  if (!req.scene_dir || req.scene.empty()) throw InputError("viz: --model needs --scenes and --scene");
  const auto model = require_model(*req.model);
  const auto scene = load_scene(*req.scene_dir, req.scene);
  write_png_rgb8(req.out, feature_map_image(model.forward(scene.frame)));
}

BenchReport cmd_bench(const RunConfig& rc, int workers, int repeats, std::ostream& log) {
  BenchReport b;
  b.multi_workers = workers;
  b.scaling_measurable = static_cast<int>(std::thread::hardware_concurrency()) >= workers;
  b.single_seconds = benchmark_clustering(1, repeats, rc.seed);
  b.multi_seconds = benchmark_clustering(workers, repeats, rc.seed);
  log << "stage-one clustering 64x64x16: 1 worker " << b.single_seconds << " s, " << workers << " workers "
      << b.multi_seconds << " s, speedup " << b.single_seconds / b.multi_seconds << "\n";
  if (!b.scaling_measurable) {
    log << "note: only " << std::thread::hardware_concurrency() << " hardware threads; speedup is not meaningful\n";
  }
  return b;
}

}  // namespace embedseg
