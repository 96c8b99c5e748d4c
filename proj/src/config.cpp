#include "embedseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace embedseg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value, const char* want) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, want);
  return out;
}

int as_int(const std::string& k, const std::string& v) { return parse_number<int>(k, v, "an integer"); }
std::uint64_t as_u64(const std::string& k, const std::string& v) {
  return parse_number<std::uint64_t>(k, v, "an unsigned integer");
}
double as_double(const std::string& k, const std::string& v) { return parse_number<double>(k, v, "a number"); }

bool as_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(k, v, "true or false");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kDisk: return "disk";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "?";
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class S>
struct Field {
  std::string key;
  std::function<void(S&, const std::string&)> set;
  std::function<std::string(const S&)> get;
};

#define ES_FIELD(S, key, member, parse)                                          \
  Field<S> {                                                                     \
    key, [](S& s, const std::string& v) { s.member = parse(key, v); },           \
        [](const S& s) { return fmt(s.member); }                                 \
  }

std::vector<Field<SceneSpec>> scene_fields() {
  using S = SceneSpec;
  return {
      ES_FIELD(S, "height", height, as_int),
      ES_FIELD(S, "width", width, as_int),
      ES_FIELD(S, "min_objects", min_objects, as_int),
      ES_FIELD(S, "max_objects", max_objects, as_int),
      ES_FIELD(S, "table_depth", table_depth, as_double),
      ES_FIELD(S, "table_tilt", table_tilt, as_double),
      ES_FIELD(S, "min_object_height", min_object_height, as_double),
      ES_FIELD(S, "max_object_height", max_object_height, as_double),
      ES_FIELD(S, "min_height_gap", min_height_gap, as_double),
      ES_FIELD(S, "min_object_size", min_object_size, as_int),
      ES_FIELD(S, "max_object_size", max_object_size, as_int),
      ES_FIELD(S, "min_visible_pixels", min_visible_pixels, as_int),
      ES_FIELD(S, "max_placement_attempts", max_placement_attempts, as_int),
      ES_FIELD(S, "rgb_noise", rgb_noise, as_double),
      ES_FIELD(S, "depth_noise", depth_noise, as_double),
      ES_FIELD(S, "focal", focal, as_double),
      ES_FIELD(S, "seed", seed, as_u64),
      Field<S>{"shapes",
               [](S& s, const std::string& v) {
                 s.shapes.clear();
                 for (const auto& name : split_commas(v)) {
                   if (name == "disk") s.shapes.push_back(ShapeKind::kDisk);
                   else if (name == "box") s.shapes.push_back(ShapeKind::kBox);
                   else if (name == "triangle") s.shapes.push_back(ShapeKind::kTriangle);
                   else bad_value("scene.shapes", v, "a list of disk|box|triangle");
                 }
               },
               [](const S& s) {
                 std::string out;
                 for (auto k : s.shapes) out += (out.empty() ? "" : ",") + std::string(shape_name(k));
                 return out;
               }},
  };
}

std::vector<Field<LossConfig>> loss_fields() {
  using S = LossConfig;
  return {
      ES_FIELD(S, "alpha", alpha, as_double),
      ES_FIELD(S, "delta", delta, as_double),
      ES_FIELD(S, "lambda_intra", lambda_intra, as_double),
      ES_FIELD(S, "lambda_inter", lambda_inter, as_double),
      ES_FIELD(S, "samples", samples_per_object, as_int),
      ES_FIELD(S, "seed", seed, as_u64),
  };
}

std::vector<Field<EmbedderConfig>> embedder_fields() {
  using S = EmbedderConfig;
  return {
      Field<S>{"fusion", [](S& s, const std::string& v) {
                 try {
                   s.fusion = parse_fusion(v);
                 } catch (const std::exception&) {
                   bad_value("fusion", v, "early|add|concat|rgb|depth");
                 }
               },
               [](const S& s) { return to_string(s.fusion); }},
      ES_FIELD(S, "dim", embedding_dim, as_int),
      Field<S>{"widths",
               [](S& s, const std::string& v) {
                 const auto parts = split_commas(v);
                 if (parts.size() != 3) bad_value("widths", v, "three comma-separated integers");
                 for (int i = 0; i < 3; ++i) s.widths[i] = as_int("widths", parts[i]);
               },
               [](const S& s) {
                 return fmt(s.widths[0]) + "," + fmt(s.widths[1]) + "," + fmt(s.widths[2]);
               }},
      ES_FIELD(S, "concat_keep_2c", concat_keep_2c, as_bool),
      ES_FIELD(S, "lr", learning_rate, as_double),
      ES_FIELD(S, "epochs", epochs, as_int),
      ES_FIELD(S, "batch", batch_size, as_int),
      ES_FIELD(S, "seed", seed, as_u64),
  };
}

std::vector<Field<MeanShiftConfig>> meanshift_fields() {
  using S = MeanShiftConfig;
  return {
      ES_FIELD(S, "kappa", kappa, as_double),
      ES_FIELD(S, "epsilon", epsilon, as_double),
      ES_FIELD(S, "seeds", seeds, as_int),
      ES_FIELD(S, "iterations", iterations, as_int),
      ES_FIELD(S, "min_cluster_size", min_cluster_size, as_int),
      Field<S>{"first_seed",
               [](S& s, const std::string& v) {
                 if (v == "random") s.first_seed = FirstSeed::kRandom;
                 else if (v == "farthest") s.first_seed = FirstSeed::kFarthestFromMean;
                 else bad_value("first_seed", v, "random|farthest");
               },
               [](const S& s) { return std::string(s.first_seed == FirstSeed::kRandom ? "random" : "farthest"); }},
      Field<S>{"merge",
               [](S& s, const std::string& v) {
                 if (v == "mean") s.merge = MergeRule::kSingleLinkageMean;
                 else if (v == "first") s.merge = MergeRule::kKeepFirst;
                 else bad_value("merge", v, "mean|first");
               },
               [](const S& s) { return std::string(s.merge == MergeRule::kSingleLinkageMean ? "mean" : "first"); }},
  };
}

std::vector<Field<RefineConfig>> refine_fields() {
  using S = RefineConfig;
  std::vector<Field<S>> out{
      ES_FIELD(S, "roi_size", roi_size, as_int),
      ES_FIELD(S, "padding", padding, as_double),
      ES_FIELD(S, "keep_threshold", keep_threshold, as_double),
      ES_FIELD(S, "keep_original_if_empty", keep_original_if_empty, as_bool),
  };
  for (auto& f : meanshift_fields()) {
    out.push_back({f.key, [set = f.set](S& s, const std::string& v) { set(s.meanshift, v); },
                   [get = f.get](const S& s) { return get(s.meanshift); }});
  }
  return out;
}

#undef ES_FIELD

// Rebinds a sub-config field table onto RunConfig under a section prefix.
template <class S>
std::vector<Field<RunConfig>> lift(const std::string& prefix, std::vector<Field<S>> fields,
                                   S& (*member)(RunConfig&)) {
  std::vector<Field<RunConfig>> out;
  for (auto& f : fields) {
    out.push_back({prefix + "." + f.key,
                   [set = f.set, member](RunConfig& rc, const std::string& v) { set(member(rc), v); },
                   [get = f.get, member](const RunConfig& rc) { return get(member(const_cast<RunConfig&>(rc))); }});
  }
  return out;
}

// Keys are applied in phases so derived defaults can be filled in between:
// 0 sets the master seed, 1 the primary sections, 2 the sections copied from
// phase 1 results (roi.*, refine.*).
struct Phased {
  int phase;
  Field<RunConfig> field;
};

const std::vector<Phased>& all_fields() {
  static const std::vector<Phased> table = [] {
    std::vector<Phased> t;
    t.push_back({0, {"run.seed", [](RunConfig& rc, const std::string& v) { rc.seed = as_u64("run.seed", v); },
                     [](const RunConfig& rc) { return fmt(rc.seed); }}});
    t.push_back({1, {"run.workers",
                     [](RunConfig& rc, const std::string& v) { rc.workers = as_int("run.workers", v); },
                     [](const RunConfig& rc) { return fmt(rc.workers); }}});
    t.push_back({1, {"gen.count", [](RunConfig& rc, const std::string& v) { rc.gen_count = as_int("gen.count", v); },
                     [](const RunConfig& rc) { return fmt(rc.gen_count); }}});
    t.push_back({1, {"gen.first_index",
                     [](RunConfig& rc, const std::string& v) { rc.gen_first_index = as_u64("gen.first_index", v); },
                     [](const RunConfig& rc) { return fmt(rc.gen_first_index); }}});
    for (auto& f : lift<SceneSpec>("scene", scene_fields(), [](RunConfig& rc) -> SceneSpec& { return rc.scene; }))
      t.push_back({1, f});
    for (auto& f : lift<LossConfig>("loss", loss_fields(), [](RunConfig& rc) -> LossConfig& { return rc.loss; }))
      t.push_back({1, f});
    for (auto& f : lift<EmbedderConfig>("embedder", embedder_fields(),
                                        [](RunConfig& rc) -> EmbedderConfig& { return rc.embedder; }))
      t.push_back({1, f});
    for (auto& f : lift<MeanShiftConfig>("meanshift", meanshift_fields(),
                                         [](RunConfig& rc) -> MeanShiftConfig& { return rc.meanshift; }))
      t.push_back({1, f});
    t.push_back({1, {"metrics.boundary_tolerance",
                     [](RunConfig& rc, const std::string& v) {
                       rc.boundary_tolerance = as_double("metrics.boundary_tolerance", v);
                     },
                     [](const RunConfig& rc) { return fmt(rc.boundary_tolerance); }}});
    t.push_back({1, {"metrics.aggregation",
                     [](RunConfig& rc, const std::string& v) {
                       if (v == "mean") rc.aggregation = Aggregation::kPerImageMean;
                       else if (v == "pooled") rc.aggregation = Aggregation::kPooled;
                       else bad_value("metrics.aggregation", v, "mean|pooled");
                     },
                     [](const RunConfig& rc) {
                       return std::string(rc.aggregation == Aggregation::kPooled ? "pooled" : "mean");
                     }}});
    t.push_back({1, {"eval.pred_suffix", [](RunConfig& rc, const std::string& v) { rc.pred_suffix = v; },
                     [](const RunConfig& rc) { return rc.pred_suffix; }}});
    t.push_back({1, {"eval.truth_suffix", [](RunConfig& rc, const std::string& v) { rc.truth_suffix = v; },
                     [](const RunConfig& rc) { return rc.truth_suffix; }}});
    for (auto& f : lift<EmbedderConfig>("roi", embedder_fields(),
                                        [](RunConfig& rc) -> EmbedderConfig& { return rc.roi_embedder; }))
      t.push_back({2, f});
    for (auto& f :
         lift<RefineConfig>("refine", refine_fields(), [](RunConfig& rc) -> RefineConfig& { return rc.refine; }))
      t.push_back({2, f});
    return t;
  }();
  return table;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos || trim(body.substr(0, eq)).empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void KeyValueConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

RunConfig make_run_config(const KeyValueConfig& kv) {
  const auto& fields = all_fields();
  for (const auto& [key, value] : kv.entries()) {
    bool known = false;
    for (const auto& f : fields) known = known || f.field.key == key;
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig rc;
  auto apply_phase = [&](int phase) {
    for (const auto& f : fields) {
      if (f.phase != phase) continue;
      if (const auto v = kv.get(f.field.key)) f.field.set(rc, *v);
    }
  };
  apply_phase(0);
  rc.scene.seed = rc.loss.seed = rc.embedder.seed = rc.seed;
  apply_phase(1);
  rc.roi_embedder = rc.embedder;
  rc.roi_embedder.seed = rc.embedder.seed + 1;  // independent initialization
  rc.refine.meanshift = rc.meanshift;
  apply_phase(2);

  if (rc.workers < 1) throw ConfigError("run.workers must be >= 1");
  if (rc.gen_count < 1) throw ConfigError("gen.count must be >= 1");
  if (!(rc.boundary_tolerance >= 0.0)) throw ConfigError("metrics.boundary_tolerance must be >= 0");
  try {
    rc.scene.validate();
    rc.loss.validate();
    rc.embedder.validate();
    rc.roi_embedder.validate();
    rc.meanshift.validate();
    rc.refine.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  rc.meanshift.workers = rc.refine.meanshift.workers = rc.workers;
  return rc;
}

std::string describe(const RunConfig& rc) {
  std::string out;
  for (const auto& f : all_fields()) out += f.field.key + "=" + f.field.get(rc) + "\n";
  return out;
}

std::string describe_scene(const SceneSpec& spec) {
  std::string out;
  for (const auto& f : scene_fields()) out += "scene." + f.key + "=" + f.get(spec) + "\n";
  return out;
}

}  // namespace embedseg
