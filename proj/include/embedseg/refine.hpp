#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "embedseg/meanshift.hpp"
#include "embedseg/tensor.hpp"

namespace embedseg {

struct RefineConfig {
  int roi_size = 64;           // S x S patch
  double padding = 0.25;       // fraction of the box extent added per side
  double keep_threshold = 0.5; // |s & original| / |s| must exceed this
  bool keep_original_if_empty = false;
  MeanShiftConfig meanshift;

  void validate() const;
};

/// Continuous source rectangle; pixel (r, c) covers [r, r+1) x [c, c+1).
struct RoiRect {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  double height() const { return y1 - y0; }
  double width() const { return x1 - x0; }
};

struct RoiCrop {
  RoiRect rect;
  RgbdFrame patch;                 // roi_size x roi_size
  Grid2<std::uint8_t> mask;        // resized originating segment
  int image_height = 0;
  int image_width = 0;
  std::vector<int> segment;        // originating segment, image pixel indices
};

using RoiEmbedder = std::function<EmbeddingGrid(const RgbdFrame&)>;

/// Padded, clipped bounding box of one label.
RoiRect roi_rect(const LabelMask& mask, Label id, double padding);

/// Crops and resizes: bilinear for RGB, nearest for depth, XYZ and labels.
RoiCrop crop_roi(const RgbdFrame& frame, const LabelMask& mask, Label id, const RefineConfig& cfg);

/// Nearest-neighbour resample of a label mask over a source rectangle.
LabelMask crop_labels(const LabelMask& mask, const RoiRect& rect, int size);

/// Image pixels inside the rectangle paired with the patch pixel they map to.
std::vector<std::pair<int, int>> roi_backmap(const RoiRect& rect, int image_height, int image_width, int size);

/// Keeps the non-background patch segments whose candidate-normalized overlap
/// with the originating segment exceeds the threshold; image coordinates.
std::vector<std::vector<int>> select_segments(const RoiCrop& roi, const LabelMask& patch_labels,
                                              const RefineConfig& cfg);

/// Embeds and clusters the patch, then selects segments.
std::vector<std::vector<int>> refine_segment(const RoiCrop& roi, const RoiEmbedder& embed,
                                             const RefineConfig& cfg, std::uint64_t seed);

/// Refines every stage-one segment and aggregates the kept segments into a
/// fresh mask (later segments overwrite earlier ones).
LabelMask refine_all(const RgbdFrame& frame, const LabelMask& stage_one, const RoiEmbedder& embed,
                     const RefineConfig& cfg, std::uint64_t seed);

/// One RoI training example per ground-truth object of each scene.
std::vector<LabeledFrame> build_roi_dataset(std::span<const LabeledFrame> scenes, const RefineConfig& cfg);

}  // namespace embedseg
