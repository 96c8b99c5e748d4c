#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

/// Result of a maximum-score injective assignment.
struct MatchResult {
  std::vector<std::optional<int>> pred_to_truth;  // one entry per row
  std::vector<double> pair_scores;                // score of each matched row (0 when unmatched)
  double total = 0.0;                             // sum over matched rows in row order
};

/// Dense row-major score matrix.
struct ScoreMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  double operator()(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Object pixel sets of a mask, background (0) excluded.
struct ObjectSets {
  std::vector<Label> ids;                 // ascending
  std::vector<std::vector<int>> pixels;   // flat indices per id
};
ObjectSets object_sets(const LabelMask& mask);

/// F-measure between every predicted and every truth object.
ScoreMatrix pairwise_f(const LabelMask& pred, const LabelMask& truth);

/// Hungarian (Kuhn-Munkres) maximization; rectangular inputs are zero-padded
/// and zero-score pairs are dropped from the mapping.
MatchResult hungarian_match(const ScoreMatrix& scores);

struct Prf {
  double p = 0.0, r = 0.0, f = 0.0;
};

/// F = 2PR / (P + R), 0 when both vanish.
double f_measure(double p, double r);

Prf overlap_prf(const LabelMask& pred, const LabelMask& truth);

/// Boundary pixels of a binary set: members with a 4-neighbour outside the
/// set or on the image edge.
std::vector<int> boundary_pixels(const std::vector<int>& members, int height, int width);

Prf boundary_prf(const LabelMask& pred, const LabelMask& truth, double tolerance = 1.0);

/// Percentage of truth objects whose matched prediction reaches F >= 0.75.
/// `matched_f` holds one entry per truth object (0 for unmatched).
double percent_75(const std::vector<double>& matched_f, int truth_count);

struct EvalReport {
  Prf overlap;
  Prf boundary;
  double pct75 = 100.0;
  int num_pred = 0;
  int num_truth = 0;
  // Raw tallies for pooled aggregation.
  double overlap_tp = 0, pred_area = 0, truth_area = 0;
  double boundary_tp_p = 0, boundary_tp_r = 0, pred_boundary = 0, truth_boundary = 0;
  int truth_ok = 0;
};

EvalReport evaluate(const LabelMask& pred, const LabelMask& truth, double boundary_tolerance = 1.0);

enum class Aggregation { kPerImageMean, kPooled };

EvalReport aggregate(const std::vector<EvalReport>& reports, Aggregation mode = Aggregation::kPerImageMean);

/// CSV header and row helpers; field order is stable.
std::string report_csv_header();
std::string report_csv_row(const std::string& name, const EvalReport& r);
/// Human-readable multi-line summary.
std::string report_text(const EvalReport& r);

}  // namespace embedseg
