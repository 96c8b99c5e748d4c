#include "embedseg/tensor.hpp"

#include <unordered_map>

namespace embedseg {

Grid2<Vec3f> backproject(const Grid2<float>& depth, const CameraIntrinsics& intr) {
  intr.validate();
  Grid2<Vec3f> cloud(depth.height(), depth.width(), Vec3f{0.f, 0.f, 0.f});
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const double z = depth(v, u);
      if (!std::isfinite(z) || z < 0.0) {
        throw InputError("backproject: invalid depth at (" + std::to_string(v) + "," +
                         std::to_string(u) + ")");
      }
      if (z == 0.0) continue;
      cloud(v, u) = {static_cast<float>((u - intr.cx) * z / intr.fx),
                     static_cast<float>((v - intr.cy) * z / intr.fy), static_cast<float>(z)};
    }
  }
  return cloud;
}

RgbdFrame make_frame(Grid2<Vec3f> rgb, Grid2<float> depth, const CameraIntrinsics& intr) {
  if (!rgb.same_shape(depth)) throw InputError("make_frame: rgb and depth sizes differ");
  RgbdFrame f;
  f.cloud = backproject(depth, intr);
  f.rgb = std::move(rgb);
  f.depth = std::move(depth);
  f.intrinsics = intr;
  return f;
}

template <class T>
double normalize_in_place(std::span<T> v) {
  double sq = 0.0;
  for (T x : v) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (norm == 0.0 || !std::isfinite(norm)) {
    std::fill(v.begin(), v.end(), T{0});
    v[0] = T{1};
    return norm;
  }
  for (T& x : v) x = static_cast<T>(static_cast<double>(x) / norm);
  return norm;
}

template <class T>
FeatureGrid<T> normalize_embeddings(FeatureGrid<T> raw) {
  for (int i = 0; i < raw.pixels(); ++i) normalize_in_place(raw.pixel(i));
  return raw;
}

template double normalize_in_place<float>(std::span<float>);
template double normalize_in_place<double>(std::span<double>);
template FeatureGrid<float> normalize_embeddings<float>(FeatureGrid<float>);
template FeatureGrid<double> normalize_embeddings<double>(FeatureGrid<double>);

LabelMask compact_labels(const LabelMask& mask) {
  LabelMask out = mask;
  std::unordered_map<Label, Label> remap{{0, 0}};
  Label next = 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Label id = out[i];
    auto [it, inserted] = remap.try_emplace(id, next);
    if (inserted) ++next;
    out[i] = it->second;
  }
  return out;
}

Label max_label(const LabelMask& mask) {
  Label m = 0;
  for (Label v : mask.values()) m = std::max(m, v);
  return m;
}

std::vector<Label> distinct_labels(const LabelMask& mask) {
  std::vector<Label> ids(mask.values().begin(), mask.values().end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace embedseg
