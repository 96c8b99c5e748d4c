#include "embedseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace embedseg {

namespace {

void check_same(const LabelMask& a, const LabelMask& b) {
  if (!a.same_shape(b)) {
    throw InputError("metrics: mask sizes differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

// Intersection counts between predicted (rows) and truth (cols) objects.
std::vector<double> intersections(const LabelMask& pred, const ObjectSets& ps, const LabelMask& truth,
                                  const ObjectSets& ts) {
  std::map<Label, int> prow, tcol;
  for (std::size_t i = 0; i < ps.ids.size(); ++i) prow[ps.ids[i]] = static_cast<int>(i);
  for (std::size_t j = 0; j < ts.ids.size(); ++j) tcol[ts.ids[j]] = static_cast<int>(j);
  std::vector<double> inter(ps.ids.size() * ts.ids.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 0 || truth[i] == 0) continue;
    inter[static_cast<std::size_t>(prow[pred[i]]) * ts.ids.size() + tcol[truth[i]]] += 1.0;
  }
  return inter;
}

}  // namespace

ObjectSets object_sets(const LabelMask& mask) {
  std::map<Label, std::vector<int>> m;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) m[mask[i]].push_back(static_cast<int>(i));
  }
  ObjectSets s;
  for (auto& [id, px] : m) {
    s.ids.push_back(id);
    s.pixels.push_back(std::move(px));
  }
  return s;
}

double f_measure(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

ScoreMatrix pairwise_f(const LabelMask& pred, const LabelMask& truth) {
  check_same(pred, truth);
  const auto ps = object_sets(pred);
  const auto ts = object_sets(truth);
  const auto inter = intersections(pred, ps, truth, ts);
  ScoreMatrix m{static_cast<int>(ps.ids.size()), static_cast<int>(ts.ids.size()), {}};
  m.values.resize(inter.size());
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      const double n = inter[static_cast<std::size_t>(i) * m.cols + j];
      const double p = n / ps.pixels[i].size();
      const double r = n / ts.pixels[j].size();
      m.values[static_cast<std::size_t>(i) * m.cols + j] = f_measure(p, r);
    }
  }
  return m;
}

MatchResult hungarian_match(const ScoreMatrix& scores) {
  for (double v : scores.values) {
    if (!std::isfinite(v)) throw InputError("hungarian_match: non-finite score");
  }
  MatchResult result;
  result.pred_to_truth.assign(scores.rows, std::nullopt);
  result.pair_scores.assign(scores.rows, 0.0);
  const int n = std::max(scores.rows, scores.cols);
  if (n == 0) return result;

  // Minimization on cost = -score over an n x n zero-padded matrix, 1-based
  // potentials formulation (u, v) with augmenting paths per row.
  auto cost = [&](int i, int j) {
    return (i < scores.rows && j < scores.cols) ? -scores(i, j) : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  for (int i = 0; i < scores.rows; ++i) {
    const int j = col_of_row[i];
    if (j >= 0 && j < scores.cols && scores(i, j) > 0.0) {
      result.pred_to_truth[i] = j;
      result.pair_scores[i] = scores(i, j);
    }
  }
  for (double s : result.pair_scores) result.total += s;
  return result;
}

Prf overlap_prf(const LabelMask& pred, const LabelMask& truth) {
  const auto r = evaluate(pred, truth);
  return r.overlap;
}

std::vector<int> boundary_pixels(const std::vector<int>& members, int height, int width) {
  std::vector<char> in(static_cast<std::size_t>(height) * width, 0);
  for (int i : members) in[i] = 1;
  std::vector<int> out;
  for (int i : members) {
    const int r = i / width, c = i % width;
    const bool edge = r == 0 || c == 0 || r == height - 1 || c == width - 1;
    if (edge || !in[i - 1] || !in[i + 1] || !in[i - width] || !in[i + width]) out.push_back(i);
  }
  return out;
}

namespace {

// Pixels of `a` lying within `tol` (Euclidean) of some pixel of `b`.
int matched_within(const std::vector<int>& a, const std::vector<int>& b, int height, int width, double tol) {
  std::vector<char> near(static_cast<std::size_t>(height) * width, 0);
  const int reach = static_cast<int>(std::floor(tol));
  for (int i : b) {
    const int r = i / width, c = i % width;
    for (int dr = -reach; dr <= reach; ++dr) {
      for (int dc = -reach; dc <= reach; ++dc) {
        if (dr * dr + dc * dc > tol * tol) continue;
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= height || cc >= width) continue;
        near[static_cast<std::size_t>(rr) * width + cc] = 1;
      }
    }
  }
  int n = 0;
  for (int i : a) n += near[i];
  return n;
}

}  // namespace

Prf boundary_prf(const LabelMask& pred, const LabelMask& truth, double tolerance) {
  return evaluate(pred, truth, tolerance).boundary;
}

double percent_75(const std::vector<double>& matched_f, int truth_count) {
  if (truth_count <= 0) return 100.0;
  int ok = 0;
  for (double f : matched_f) ok += f >= 0.75 ? 1 : 0;
  return 100.0 * ok / truth_count;
}

EvalReport evaluate(const LabelMask& pred, const LabelMask& truth, double boundary_tolerance) {
  check_same(pred, truth);
  if (boundary_tolerance < 0.0) throw InputError("evaluate: boundary tolerance must be >= 0");
  const int h = pred.height(), w = pred.width();
  const auto ps = object_sets(pred);
  const auto ts = object_sets(truth);
  const auto scores = pairwise_f(pred, truth);
  const auto match = hungarian_match(scores);
  const auto inter = intersections(pred, ps, truth, ts);

  EvalReport r;
  r.num_pred = static_cast<int>(ps.ids.size());
  r.num_truth = static_cast<int>(ts.ids.size());
  for (const auto& px : ps.pixels) r.pred_area += px.size();
  for (const auto& px : ts.pixels) r.truth_area += px.size();

  std::vector<std::vector<int>> pb, tb;
  for (const auto& px : ps.pixels) pb.push_back(boundary_pixels(px, h, w));
  for (const auto& px : ts.pixels) tb.push_back(boundary_pixels(px, h, w));
  for (const auto& b : pb) r.pred_boundary += b.size();
  for (const auto& b : tb) r.truth_boundary += b.size();

  std::vector<double> truth_f(ts.ids.size(), 0.0);
  for (int i = 0; i < r.num_pred; ++i) {
    if (!match.pred_to_truth[i]) continue;
    const int j = *match.pred_to_truth[i];
    r.overlap_tp += inter[static_cast<std::size_t>(i) * ts.ids.size() + j];
    r.boundary_tp_p += matched_within(pb[i], tb[j], h, w, boundary_tolerance);
    r.boundary_tp_r += matched_within(tb[j], pb[i], h, w, boundary_tolerance);
    truth_f[j] = match.pair_scores[i];
  }
  r.overlap = {ratio(r.overlap_tp, r.pred_area), ratio(r.overlap_tp, r.truth_area), 0.0};
  r.overlap.f = f_measure(r.overlap.p, r.overlap.r);
  r.boundary = {ratio(r.boundary_tp_p, r.pred_boundary), ratio(r.boundary_tp_r, r.truth_boundary), 0.0};
  r.boundary.f = f_measure(r.boundary.p, r.boundary.r);
  for (double f : truth_f) r.truth_ok += f >= 0.75 ? 1 : 0;
  r.pct75 = percent_75(truth_f, r.num_truth);
  return r;
}

EvalReport aggregate(const std::vector<EvalReport>& reports, Aggregation mode) {
  if (reports.empty()) throw InputError("aggregate: no reports");
  EvalReport out;
  out.pct75 = 0.0;
  for (const auto& r : reports) {
    out.num_pred += r.num_pred;
    out.num_truth += r.num_truth;
    out.overlap_tp += r.overlap_tp;
    out.pred_area += r.pred_area;
    out.truth_area += r.truth_area;
    out.boundary_tp_p += r.boundary_tp_p;
    out.boundary_tp_r += r.boundary_tp_r;
    out.pred_boundary += r.pred_boundary;
    out.truth_boundary += r.truth_boundary;
    out.truth_ok += r.truth_ok;
  }
  if (mode == Aggregation::kPooled) {
    out.overlap = {ratio(out.overlap_tp, out.pred_area), ratio(out.overlap_tp, out.truth_area), 0.0};
    out.overlap.f = f_measure(out.overlap.p, out.overlap.r);
    out.boundary = {ratio(out.boundary_tp_p, out.pred_boundary), ratio(out.boundary_tp_r, out.truth_boundary), 0.0};
    out.boundary.f = f_measure(out.boundary.p, out.boundary.r);
    out.pct75 = out.num_truth > 0 ? 100.0 * out.truth_ok / out.num_truth : 100.0;
    return out;
  }
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.overlap.p += r.overlap.p / n;
    out.overlap.r += r.overlap.r / n;
    out.overlap.f += r.overlap.f / n;
    out.boundary.p += r.boundary.p / n;
    out.boundary.r += r.boundary.r / n;
    out.boundary.f += r.boundary.f / n;
    out.pct75 += r.pct75 / n;
  }
  return out;
}

std::string report_csv_header() {
  return "image,overlap_p,overlap_r,overlap_f,boundary_p,boundary_r,boundary_f,pct75,num_pred,num_truth";
}

std::string report_csv_row(const std::string& name, const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.4f,%d,%d", name.c_str(), r.overlap.p,
                r.overlap.r, r.overlap.f, r.boundary.p, r.boundary.r, r.boundary.f, r.pct75, r.num_pred,
                r.num_truth);
  return buf;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "overlap   P=%.4f R=%.4f F=%.4f\n", r.overlap.p, r.overlap.r, r.overlap.f);
  os << buf;
  std::snprintf(buf, sizeof buf, "boundary  P=%.4f R=%.4f F=%.4f\n", r.boundary.p, r.boundary.r, r.boundary.f);
  os << buf;
  std::snprintf(buf, sizeof buf, "pct75     %.2f\nobjects   pred=%d truth=%d\n", r.pct75, r.num_pred, r.num_truth);
  os << buf;
  return os.str();
}

}  // namespace embedseg
