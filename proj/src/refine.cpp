#include "embedseg/refine.hpp"

#include <algorithm>
#include <cmath>

namespace embedseg {

void RefineConfig::validate() const {
  if (roi_size < 16 || roi_size % 2 != 0) throw InputError("RefineConfig: roi_size must be even and >= 16");
  if (!(padding >= 0.0)) throw InputError("RefineConfig: padding must be >= 0");
  if (!(keep_threshold > 0.0 && keep_threshold <= 1.0)) {
    throw InputError("RefineConfig: keep_threshold must lie in (0,1]");
  }
  meanshift.validate();
}

RoiRect roi_rect(const LabelMask& mask, Label id, double padding) {
  int rmin = mask.height(), rmax = -1, cmin = mask.width(), cmax = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c) != id) continue;
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
  }
  if (rmax < 0) throw InputError("roi_rect: label " + std::to_string(id) + " not present in mask");
  const double h = rmax + 1 - rmin;
  const double w = cmax + 1 - cmin;
  RoiRect r;
  r.y0 = std::max(0.0, rmin - padding * h);
  r.y1 = std::min<double>(mask.height(), rmax + 1 + padding * h);
  r.x0 = std::max(0.0, cmin - padding * w);
  r.x1 = std::min<double>(mask.width(), cmax + 1 + padding * w);
  return r;
}

namespace {

int nearest_index(double coord, int limit) {
  return std::clamp(static_cast<int>(std::floor(coord)), 0, limit - 1);
}

// Source coordinate of the centre of patch index i.
double source_coord(double lo, double extent, int i, int size) { return lo + (i + 0.5) * extent / size; }

template <class T>
Grid2<T> resize_nearest(const Grid2<T>& src, const RoiRect& rect, int size) {
  Grid2<T> out(size, size);
  for (int i = 0; i < size; ++i) {
    const int r = nearest_index(source_coord(rect.y0, rect.height(), i, size), src.height());
    for (int j = 0; j < size; ++j) {
      const int c = nearest_index(source_coord(rect.x0, rect.width(), j, size), src.width());
      out(i, j) = src(r, c);
    }
  }
  return out;
}

Grid2<Vec3f> resize_bilinear(const Grid2<Vec3f>& src, const RoiRect& rect, int size) {
  Grid2<Vec3f> out(size, size);
  const int h = src.height(), w = src.width();
  for (int i = 0; i < size; ++i) {
    const double sy = source_coord(rect.y0, rect.height(), i, size) - 0.5;
    const int r0 = static_cast<int>(std::floor(sy));
    const double fy = sy - r0;
    const int ra = std::clamp(r0, 0, h - 1), rb = std::clamp(r0 + 1, 0, h - 1);
    for (int j = 0; j < size; ++j) {
      const double sx = source_coord(rect.x0, rect.width(), j, size) - 0.5;
      const int c0 = static_cast<int>(std::floor(sx));
      const double fx = sx - c0;
      const int ca = std::clamp(c0, 0, w - 1), cb = std::clamp(c0 + 1, 0, w - 1);
      Vec3f v;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1 - fx) * src(ra, ca)[ch] + fx * src(ra, cb)[ch];
        const double bot = (1 - fx) * src(rb, ca)[ch] + fx * src(rb, cb)[ch];
        v[ch] = static_cast<float>((1 - fy) * top + fy * bot);
      }
      out(i, j) = v;
    }
  }
  return out;
}

}  // namespace

LabelMask crop_labels(const LabelMask& mask, const RoiRect& rect, int size) {
  return resize_nearest(mask, rect, size);
}

RoiCrop crop_roi(const RgbdFrame& frame, const LabelMask& mask, Label id, const RefineConfig& cfg) {
  cfg.validate();
  if (!mask.same_shape(frame.depth)) throw InputError("crop_roi: mask and frame sizes differ");
  RoiCrop roi;
  roi.rect = roi_rect(mask, id, cfg.padding);
  roi.image_height = mask.height();
  roi.image_width = mask.width();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == id) roi.segment.push_back(static_cast<int>(i));
  }
  const int s = cfg.roi_size;
  roi.patch.rgb = resize_bilinear(frame.rgb, roi.rect, s);
  roi.patch.depth = resize_nearest(frame.depth, roi.rect, s);
  roi.patch.cloud = resize_nearest(frame.cloud, roi.rect, s);
  const double sx = s / roi.rect.width(), sy = s / roi.rect.height();
  roi.patch.intrinsics = {frame.intrinsics.fx * sx, frame.intrinsics.fy * sy,
                          (frame.intrinsics.cx + 0.5 - roi.rect.x0) * sx - 0.5,
                          (frame.intrinsics.cy + 0.5 - roi.rect.y0) * sy - 0.5};
  roi.mask = Grid2<std::uint8_t>(s, s, 0);
  const auto labels = resize_nearest(mask, roi.rect, s);
  for (std::size_t i = 0; i < labels.size(); ++i) roi.mask[i] = labels[i] == id ? 1 : 0;
  return roi;
}

std::vector<std::pair<int, int>> roi_backmap(const RoiRect& rect, int image_height, int image_width, int size) {
  std::vector<std::pair<int, int>> out;
  const int r_lo = std::max(0, static_cast<int>(std::floor(rect.y0)));
  const int r_hi = std::min(image_height, static_cast<int>(std::ceil(rect.y1)));
  const int c_lo = std::max(0, static_cast<int>(std::floor(rect.x0)));
  const int c_hi = std::min(image_width, static_cast<int>(std::ceil(rect.x1)));
  for (int r = r_lo; r < r_hi; ++r) {
    const double cy = r + 0.5;
    if (cy < rect.y0 || cy >= rect.y1) continue;
    const int i = nearest_index((cy - rect.y0) * size / rect.height(), size);
    for (int c = c_lo; c < c_hi; ++c) {
      const double cx = c + 0.5;
      if (cx < rect.x0 || cx >= rect.x1) continue;
      const int j = nearest_index((cx - rect.x0) * size / rect.width(), size);
      out.emplace_back(r * image_width + c, i * size + j);
    }
  }
  return out;
}

std::vector<std::vector<int>> select_segments(const RoiCrop& roi, const LabelMask& patch_labels,
                                              const RefineConfig& cfg) {
  const int s = cfg.roi_size;
  if (!patch_labels.same_shape(s, s)) throw InputError("select_segments: patch label size mismatch");
  const Label k = max_label(patch_labels);
  std::vector<std::vector<int>> candidates(k + 1);
  for (const auto& [image_px, patch_px] : roi_backmap(roi.rect, roi.image_height, roi.image_width, s)) {
    candidates[patch_labels[patch_px]].push_back(image_px);
  }
  std::vector<char> original(static_cast<std::size_t>(roi.image_height) * roi.image_width, 0);
  for (int i : roi.segment) original[i] = 1;

  std::vector<std::vector<int>> kept;
  for (Label id = 1; id <= k; ++id) {
    const auto& cand = candidates[id];
    if (cand.empty()) continue;
    int inside = 0;
    for (int i : cand) inside += original[i];
    if (static_cast<double>(inside) / cand.size() > cfg.keep_threshold) kept.push_back(cand);
  }
  if (kept.empty() && cfg.keep_original_if_empty && !roi.segment.empty()) kept.push_back(roi.segment);
  return kept;
}

std::vector<std::vector<int>> refine_segment(const RoiCrop& roi, const RoiEmbedder& embed,
                                             const RefineConfig& cfg, std::uint64_t seed) {
  const auto embeddings = embed(roi.patch);
  const auto labels = segment_image(embeddings, cfg.meanshift, seed);
  return select_segments(roi, labels, cfg);
}

LabelMask refine_all(const RgbdFrame& frame, const LabelMask& stage_one, const RoiEmbedder& embed,
                     const RefineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LabelMask out(stage_one.height(), stage_one.width(), 0);
  Label next = 1;
  for (Label id : distinct_labels(stage_one)) {
    if (id == 0) continue;
    const auto roi = crop_roi(frame, stage_one, id, cfg);
    for (const auto& segment : refine_segment(roi, embed, cfg, seed + static_cast<std::uint64_t>(id))) {
      for (int px : segment) out[px] = next;
      ++next;
    }
  }
  return compact_labels(out);
}

std::vector<LabeledFrame> build_roi_dataset(std::span<const LabeledFrame> scenes, const RefineConfig& cfg) {
  std::vector<LabeledFrame> out;
  for (const auto& scene : scenes) {
    for (Label id : distinct_labels(scene.truth)) {
      if (id == 0) continue;
      auto roi = crop_roi(scene.frame, scene.truth, id, cfg);
      out.push_back({std::move(roi.patch), compact_labels(crop_labels(scene.truth, roi.rect, cfg.roi_size))});
    }
  }
  return out;
}

}  // namespace embedseg
