#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

using Rgb8 = std::array<std::uint8_t, 3>;

void write_png_rgb8(const std::filesystem::path& path, const Grid2<Rgb8>& image);
void write_png_gray16(const std::filesystem::path& path, const Grid2<std::uint16_t>& image);
Grid2<Rgb8> read_png_rgb8(const std::filesystem::path& path);
Grid2<std::uint16_t> read_png_gray16(const std::filesystem::path& path);

Grid2<Rgb8> quantize_rgb(const Grid2<Vec3f>& rgb);
Grid2<Vec3f> dequantize_rgb(const Grid2<Rgb8>& rgb);

/// Depth PNG: 16-bit, 1 unit = 1 mm, 0 = missing.
void save_depth_png(const std::filesystem::path& path, const Grid2<float>& depth_m);
Grid2<float> load_depth_png(const std::filesystem::path& path);

void save_label_png(const std::filesystem::path& path, const LabelMask& mask);
LabelMask load_label_png(const std::filesystem::path& path);

void save_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr);
CameraIntrinsics load_intrinsics(const std::filesystem::path& path);

/// Scene file set: <name>_rgb.png, <name>_depth.png, <name>_label.png,
/// <name>_intrinsics.txt.
void save_scene(const std::filesystem::path& dir, const std::string& name, const LabeledFrame& scene);
LabeledFrame load_scene(const std::filesystem::path& dir, const std::string& name);

/// Embedding dump: "ESEGF", u32 version, u32 H, W, C, little-endian float32.
void save_embeddings(const std::filesystem::path& path, const FeatureGrid<float>& grid);
FeatureGrid<float> load_embeddings(const std::filesystem::path& path);

/// Sums channels with stride three into an RGB image and min-max scales each
/// of the three planes to [0, 255]; a plane with zero range renders as 128.
Grid2<Rgb8> feature_map_image(const FeatureGrid<float>& grid);

/// Fixed 256-entry label palette (bit-interleaved colour map).
Rgb8 palette_color(Label id);
Grid2<Rgb8> render_labels(const LabelMask& mask);

}  // namespace embedseg
