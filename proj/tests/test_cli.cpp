#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "embedseg/commands.hpp"
#include "embedseg/image_io.hpp"
#include "embedseg/metrics.hpp"

using namespace embedseg;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "embedseg_cli";

// Small, fast model settings shared by every invocation that trains.
const std::string kFast =
    " --set embedder.widths=4,6,6 --set embedder.dim=4 --set embedder.epochs=1 --set embedder.batch=2"
    " --set roi.epochs=1 --set refine.roi_size=32";

struct Run {
  int code;
  std::string output;
};

Run cli(const std::string& args) {
  const fs::path log = kRoot / "last_run.log";
  fs::create_directories(kRoot);
  const std::string cmd = std::string(EMBEDSEG_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

fs::path fresh(const std::string& name) {
  const auto d = kRoot / name;
  fs::remove_all(d);
  return d;
}

bool same_up_to_permutation(const LabelMask& a, const LabelMask& b) {
  if (!a.same_shape(b)) return false;
  std::map<Label, Label> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ab.emplace(a[i], b[i]).first->second != b[i]) return false;
    if (ba.emplace(b[i], a[i]).first->second != a[i]) return false;
  }
  return true;
}

// Three generated scenes, shared by the tests below.
const fs::path& scenes() {
  static const fs::path dir = [] {
    const auto d = fresh("scenes");
    const auto r = cli("gen --out " + d.string() + " --count 3 --seed 4");
    EXPECT_EQ(r.code, 0) << r.output;
    return d;
  }();
  return dir;
}

const fs::path& models() {
  static const fs::path dir = [] {
    const auto d = fresh("models");
    const auto r = cli("train --scenes " + scenes().string() + " --out " + d.string() + " --seed 4" + kFast);
    EXPECT_EQ(r.code, 0) << r.output;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(CliGen, WritesFourFilesPerSceneAndManifest) {
  const auto files = dir_contents(scenes());
  EXPECT_EQ(files.size(), 3u * 4 + 1);
  ASSERT_TRUE(files.count(kManifestName));
  const auto m = read_manifest(scenes());
  EXPECT_EQ(m.count, 3);
  EXPECT_EQ(m.scenes, (std::vector<std::string>{"scene_000000", "scene_000001", "scene_000002"}));
  EXPECT_NE(files.at(kManifestName).find("1 mm"), std::string::npos);
  EXPECT_NE(files.at(kManifestName).find("scene.height=64"), std::string::npos);
}

TEST(CliGen, RerunIsByteIdentical) {
  const auto again = fresh("scenes_again");
  ASSERT_EQ(cli("gen --out " + again.string() + " --count 3 --seed 4").code, 0);
  EXPECT_EQ(dir_contents(again), dir_contents(scenes()));
  const auto other = fresh("scenes_other");
  ASSERT_EQ(cli("gen --out " + other.string() + " --count 3 --seed 5").code, 0);
  EXPECT_NE(dir_contents(other).at("scene_000000_depth.png"), dir_contents(scenes()).at("scene_000000_depth.png"));
}

TEST(CliGen, ParallelWorkersProduceSameFiles) {
  const auto par = fresh("scenes_par");
  ASSERT_EQ(cli("gen --out " + par.string() + " --count 3 --seed 4 --workers 3").code, 0);
  EXPECT_EQ(dir_contents(par), dir_contents(scenes()));
}

TEST(CliSegment, OracleMasksEqualTruth) {
  const auto out = fresh("oracle");
  const auto r = cli("segment --scenes " + scenes().string() + " --out " + out.string() + " --oracle");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const auto& name : read_manifest(scenes()).scenes) {
    const auto pred = load_label_png(out / (name + "_pred.png"));
    const auto truth = load_label_png(scenes() / (name + "_label.png"));
    EXPECT_TRUE(same_up_to_permutation(pred, truth)) << name;
  }
}

TEST(CliTrain, WritesCheckpointsAndPerStepHistory) {
  const auto dir = models();
  EXPECT_TRUE(fs::exists(dir / kModelName));
  EXPECT_TRUE(fs::exists(dir / kRoiModelName));
  std::ifstream in(dir / kLossHistoryName);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "model,step,epoch,loss,intra,inter");
  std::map<std::string, int> rows;
  while (std::getline(in, line)) ++rows[line.substr(0, line.find(','))];
  EXPECT_EQ(rows["whole"], 2);  // 3 scenes, batch 2
  EXPECT_GE(rows["roi"], 2);
  // Checkpoints reload bit-exactly.
  const auto m = load_model(dir / kModelName);
  const auto tmp = kRoot / "resaved.eseg";
  save_model(m, tmp);
  EXPECT_EQ(slurp(tmp), slurp(dir / kModelName));
}

TEST(CliTrain, RerunIsByteIdentical) {
  const auto again = fresh("models_again");
  ASSERT_EQ(cli("train --scenes " + scenes().string() + " --out " + again.string() + " --seed 4" + kFast).code, 0);
  EXPECT_EQ(dir_contents(again), dir_contents(models()));
}

TEST(CliSegment, RefineWritesSecondMaskAndIsDeterministic) {
  const auto a = fresh("seg_a"), b = fresh("seg_b");
  const std::string base = "segment --scenes " + scenes().string() + " --models " + models().string() + " --refine" +
                           " --dump-embeddings" + kFast + " --out ";
  ASSERT_EQ(cli(base + a.string()).code, 0);
  ASSERT_EQ(cli(base + b.string() + " --workers 2").code, 0);
  const auto files = dir_contents(a);
  EXPECT_EQ(files.size(), 9u);
  EXPECT_TRUE(files.count("scene_000001_refined.png"));
  EXPECT_TRUE(files.count("scene_000001_embed.esegf"));
  EXPECT_EQ(files, dir_contents(b));
  const auto emb = load_embeddings(a / "scene_000002_embed.esegf");
  EXPECT_EQ(emb.channels(), 4);
}

TEST(CliSegment, MissingCheckpointIsRuntimeFailure) {
  const auto empty = fresh("no_models");
  fs::create_directories(empty);
  const auto r = cli("segment --scenes " + scenes().string() + " --models " + empty.string() + " --out " +
                     fresh("seg_fail").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("missing checkpoint"), std::string::npos) << r.output;
}

TEST(CliEval, PredEqualsTruthIsPerfect) {
  const auto csv = kRoot / "self.csv";
  const auto r = cli("eval --pred " + scenes().string() + " --truth " + scenes().string() +
                     " --pred-suffix _label.png --out " + csv.string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(csv);
  std::string line, last;
  int rows = 0;
  while (std::getline(in, line)) last = line, ++rows;
  EXPECT_EQ(rows, 1 + 3 + 1);
  EXPECT_EQ(last.substr(0, last.find(',', last.find(',', 0) + 1)), "aggregate,1.000000");
  EXPECT_NE(last.find(",1.000000,1.000000,1.000000,1.000000,1.000000,1.000000,100.0000,"), std::string::npos) << last;
}

TEST(CliEval, MismatchedFilesAreSkippedWithWarning) {
  const auto pred = fresh("pred_mismatch");
  fs::create_directories(pred);
  fs::copy_file(scenes() / "scene_000000_label.png", pred / "scene_000000_pred.png");
  fs::copy_file(scenes() / "scene_000001_label.png", pred / "stray_pred.png");
  std::ostringstream log;
  RunConfig rc;
  const auto s = cmd_eval(rc, pred, scenes(), kRoot / "mismatch.csv", log);
  EXPECT_EQ(s.images.size(), 1u);
  // The stray prediction plus the two truths without predictions.
  EXPECT_EQ(s.skipped.size(), 3u);
  EXPECT_NE(log.str().find("stray_pred.png"), std::string::npos);
  const auto r = cli("eval --pred " + pred.string() + " --truth " + scenes().string() + " --out " +
                     (kRoot / "mismatch2.csv").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("3 files skipped"), std::string::npos) << r.output;
}

TEST(CliEval, HandBuiltFourByFour) {
  // truth: object 1 = left two columns (8 px), object 2 = pixel (3,3).
  // pred:  object 5 = left column plus (0,2) (5 px), no second object.
  const auto pred_dir = fresh("hand_pred"), truth_dir = fresh("hand_truth");
  fs::create_directories(pred_dir);
  fs::create_directories(truth_dir);
  LabelMask truth(4, 4, 0), pred(4, 4, 0);
  for (int r = 0; r < 4; ++r) truth(r, 0) = truth(r, 1) = 1, pred(r, 0) = 5;
  truth(3, 3) = 2;
  pred(0, 2) = 5;
  save_label_png(pred_dir / "a_pred.png", pred);
  save_label_png(truth_dir / "a_label.png", truth);
  std::ostringstream log;
  const auto s = cmd_eval(RunConfig{}, pred_dir, truth_dir, kRoot / "hand.csv", log);
  ASSERT_EQ(s.images.size(), 1u);
  const auto& r = s.images[0].second;
  // Overlap: tp 4, |pred| 5, |truth| 9.
  EXPECT_DOUBLE_EQ(r.overlap.p, 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.overlap.r, 4.0 / 9.0);
  EXPECT_DOUBLE_EQ(r.overlap.f, 2 * (0.8 * 4.0 / 9.0) / (0.8 + 4.0 / 9.0));
  // Matched pair F = 2*4/(5+8) = 8/13 < 0.75; both truths fail.
  EXPECT_EQ(r.pct75, 0.0);
  // Boundary: every pixel of these thin shapes is a boundary pixel. Within
  // 1 px of truth object 1: the 4 left-column pixels and (0,2). Recall side:
  // all 8 truth-1 pixels are within 1 px of pred; truth-2 unmatched.
  EXPECT_DOUBLE_EQ(r.boundary.p, 1.0);
  EXPECT_DOUBLE_EQ(r.boundary.r, 8.0 / 9.0);
  EXPECT_EQ(r.num_pred, 1);
  EXPECT_EQ(r.num_truth, 2);
}

TEST(CliViz, RendersEmbeddingsAndLabels) {
  const auto out = fresh("viz");
  fs::create_directories(out);
  FeatureGrid<float> g(8, 6, 5, 0.3f);
  save_embeddings(out / "c.esegf", g);
  ASSERT_EQ(cli("viz --embeddings " + (out / "c.esegf").string() + " --out " + (out / "c.png").string()).code, 0);
  const auto img = read_png_rgb8(out / "c.png");
  EXPECT_EQ(img.height(), 8);
  for (const auto& px : img.values()) EXPECT_EQ(px, (Rgb8{128, 128, 128}));

  ASSERT_EQ(cli("viz --labels " + (scenes() / "scene_000000_label.png").string() + " --out " +
                (out / "l.png").string())
                .code,
            0);
  const auto truth = load_label_png(scenes() / "scene_000000_label.png");
  EXPECT_EQ(read_png_rgb8(out / "l.png"), render_labels(truth));

  ASSERT_EQ(cli("viz --model " + (models() / kModelName).string() + " --scenes " + scenes().string() +
                " --scene scene_000001 --out " + (out / "m.png").string())
                .code,
            0);
  EXPECT_EQ(read_png_rgb8(out / "m.png").width(), 64);
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("gen").code, 1);  // --out is required
  EXPECT_EQ(cli("gen --out /tmp/x --set meanshift.kapa=2").code, 1);
  EXPECT_EQ(cli("gen --out /tmp/x --fusion sideways").code, 1);
  EXPECT_EQ(cli("viz --out /tmp/x.png").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
  const auto r = cli("segment --scenes " + (kRoot / "nowhere").string() + " --oracle --out " + fresh("x").string());
  EXPECT_EQ(r.code, 2);
}

TEST(CliConfig, FlagsOverrideSetWhichOverridesFile) {
  const auto cfg = kRoot / "run.cfg";
  std::ofstream(cfg) << "gen.count=5\nscene.height=32\nscene.width=32\n";
  const auto a = fresh("cfg_a");
  ASSERT_EQ(cli("gen --config " + cfg.string() + " --out " + a.string()).code, 0);
  EXPECT_EQ(read_manifest(a).count, 5);
  EXPECT_EQ(load_label_png(a / "scene_000000_label.png").height(), 32);

  const auto b = fresh("cfg_b");
  ASSERT_EQ(cli("gen --config " + cfg.string() + " --set gen.count=2 --set scene.height=48 --out " + b.string()).code,
            0);
  EXPECT_EQ(read_manifest(b).count, 2);
  EXPECT_EQ(load_label_png(b / "scene_000000_label.png").height(), 48);

  const auto c = fresh("cfg_c");
  ASSERT_EQ(cli("gen --config " + cfg.string() + " --set gen.count=2 --count 1 --out " + c.string()).code, 0);
  EXPECT_EQ(read_manifest(c).count, 1);

  // --seed beats run.seed from --set.
  const auto d = fresh("cfg_d"), e = fresh("cfg_e");
  ASSERT_EQ(cli("gen --count 1 --set run.seed=9 --seed 4 --out " + d.string()).code, 0);
  ASSERT_EQ(cli("gen --count 1 --seed 4 --out " + e.string()).code, 0);
  EXPECT_EQ(dir_contents(d), dir_contents(e));
}
