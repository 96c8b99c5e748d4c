#include "embedseg/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "embedseg/binary_io.hpp"

namespace embedseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::uint8_t>& rows, std::size_t row_bytes) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) png_fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, "PNG encoding failed");
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(rows.data() + r * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) png_fail(path, "write failed");
}

struct DecodedPng {
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> rows;
  std::size_t row_bytes = 0;
};

DecodedPng read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) png_fail(path, "cannot open for reading");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) png_fail(path, "not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "PNG decoding failed");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  DecodedPng out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (out.bit_depth == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);
  out.row_bytes = png_get_rowbytes(png, info);
  out.rows.resize(out.row_bytes * out.height);
  for (int r = 0; r < out.height; ++r) png_read_row(png, out.rows.data() + r * out.row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::uint16_t load_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void write_png_rgb8(const std::filesystem::path& path, const Grid2<Rgb8>& image) {
  const std::size_t row_bytes = static_cast<std::size_t>(image.width()) * 3;
  std::vector<std::uint8_t> rows(row_bytes * image.height());
  for (std::size_t i = 0; i < image.size(); ++i) {
    for (int c = 0; c < 3; ++c) rows[i * 3 + c] = image[i][c];
  }
  write_png(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows, row_bytes);
}

void write_png_gray16(const std::filesystem::path& path, const Grid2<std::uint16_t>& image) {
  const std::size_t row_bytes = static_cast<std::size_t>(image.width()) * 2;
  std::vector<std::uint8_t> rows(row_bytes * image.height());
  for (std::size_t i = 0; i < image.size(); ++i) {
    rows[i * 2] = static_cast<std::uint8_t>(image[i] >> 8);  // PNG is big-endian
    rows[i * 2 + 1] = static_cast<std::uint8_t>(image[i] & 0xff);
  }
  write_png(path, image.width(), image.height(), 16, PNG_COLOR_TYPE_GRAY, rows, row_bytes);
}

Grid2<Rgb8> read_png_rgb8(const std::filesystem::path& path) {
  const auto png = read_png(path);
  if (png.bit_depth != 8 || png.color_type != PNG_COLOR_TYPE_RGB) png_fail(path, "expected 8-bit RGB PNG");
  Grid2<Rgb8> out(png.height, png.width);
  for (int r = 0; r < png.height; ++r) {
    const std::uint8_t* row = png.rows.data() + r * png.row_bytes;
    for (int c = 0; c < png.width; ++c) out(r, c) = {row[c * 3], row[c * 3 + 1], row[c * 3 + 2]};
  }
  return out;
}

Grid2<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
  const auto png = read_png(path);
  if (png.bit_depth != 16 || png.color_type != PNG_COLOR_TYPE_GRAY) png_fail(path, "expected 16-bit gray PNG");
  Grid2<std::uint16_t> out(png.height, png.width);
  for (int r = 0; r < png.height; ++r) {
    const std::uint8_t* row = png.rows.data() + r * png.row_bytes;
    for (int c = 0; c < png.width; ++c) out(r, c) = load_u16(row + 2 * c);
  }
  return out;
}

Grid2<Rgb8> quantize_rgb(const Grid2<Vec3f>& rgb) {
  Grid2<Rgb8> out(rgb.height(), rgb.width());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(rgb[i][c]), 0.0, 1.0);
      out[i][c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return out;
}

Grid2<Vec3f> dequantize_rgb(const Grid2<Rgb8>& rgb) {
  Grid2<Vec3f> out(rgb.height(), rgb.width());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    for (int c = 0; c < 3; ++c) out[i][c] = static_cast<float>(rgb[i][c] / 255.0);
  }
  return out;
}

void save_depth_png(const std::filesystem::path& path, const Grid2<float>& depth_m) {
  Grid2<std::uint16_t> mm(depth_m.height(), depth_m.width());
  for (std::size_t i = 0; i < depth_m.size(); ++i) {
    const double v = std::isfinite(depth_m[i]) ? std::lround(depth_m[i] * 1000.0) : 0.0;
    mm[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
  }
  write_png_gray16(path, mm);
}

Grid2<float> load_depth_png(const std::filesystem::path& path) {
  const auto mm = read_png_gray16(path);
  Grid2<float> out(mm.height(), mm.width());
  for (std::size_t i = 0; i < mm.size(); ++i) out[i] = static_cast<float>(mm[i] / 1000.0);
  return out;
}

void save_label_png(const std::filesystem::path& path, const LabelMask& mask) {
  Grid2<std::uint16_t> ids(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 0 || mask[i] > 65535) {
      throw InputError(path.string() + ": label " + std::to_string(mask[i]) + " out of 16-bit range");
    }
    ids[i] = static_cast<std::uint16_t>(mask[i]);
  }
  write_png_gray16(path, ids);
}

LabelMask load_label_png(const std::filesystem::path& path) {
  const auto ids = read_png_gray16(path);
  LabelMask out(ids.height(), ids.width());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = ids[i];
  return out;
}

void save_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  char buf[256];
  std::snprintf(buf, sizeof buf, "fx=%.17g\nfy=%.17g\ncx=%.17g\ncy=%.17g\n", intr.fx, intr.fy, intr.cx, intr.cy);
  out << buf;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

CameraIntrinsics load_intrinsics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  CameraIntrinsics intr;
  int seen = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string text = line.substr(eq + 1);
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || text.find_first_not_of(" \t\r", used) != std::string::npos) {
      throw std::runtime_error(path.string() + ": bad value for " + key + ": '" + text + "'");
    }
    if (key == "fx") intr.fx = v, seen |= 1;
    else if (key == "fy") intr.fy = v, seen |= 2;
    else if (key == "cx") intr.cx = v, seen |= 4;
    else if (key == "cy") intr.cy = v, seen |= 8;
  }
  if (seen != 15) throw std::runtime_error(path.string() + ": missing intrinsics fields");
  intr.validate();
  return intr;
}

void save_scene(const std::filesystem::path& dir, const std::string& name, const LabeledFrame& scene) {
  write_png_rgb8(dir / (name + "_rgb.png"), quantize_rgb(scene.frame.rgb));
  save_depth_png(dir / (name + "_depth.png"), scene.frame.depth);
  save_label_png(dir / (name + "_label.png"), scene.truth);
  save_intrinsics(dir / (name + "_intrinsics.txt"), scene.frame.intrinsics);
}

LabeledFrame load_scene(const std::filesystem::path& dir, const std::string& name) {
  auto rgb = dequantize_rgb(read_png_rgb8(dir / (name + "_rgb.png")));
  auto depth = load_depth_png(dir / (name + "_depth.png"));
  const auto intr = load_intrinsics(dir / (name + "_intrinsics.txt"));
  LabeledFrame scene;
  scene.truth = load_label_png(dir / (name + "_label.png"));
  if (!scene.truth.same_shape(depth) || !rgb.same_shape(depth)) {
    throw std::runtime_error((dir / name).string() + ": scene images differ in size");
  }
  scene.frame = make_frame(std::move(rgb), std::move(depth), intr);
  return scene;
}

namespace {
constexpr std::uint32_t kDumpVersion = 1;
}

void save_embeddings(const std::filesystem::path& path, const FeatureGrid<float>& grid) {
  ByteWriter w;
  w.bytes("ESEGF");
  w.u32(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(grid.height()));
  w.u32(static_cast<std::uint32_t>(grid.width()));
  w.u32(static_cast<std::uint32_t>(grid.channels()));
  for (float v : grid.values()) w.f32(v);
  write_file_bytes(path, w.take());
}

FeatureGrid<float> load_embeddings(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    ByteReader r(bytes);
    r.expect("ESEGF");
    if (r.u32() != kDumpVersion) throw FormatError("unsupported embedding dump version");
    const auto h = r.u32(), w = r.u32(), c = r.u32();
    if (h == 0 || w == 0 || c == 0 || static_cast<std::uint64_t>(h) * w * c * 4 + 21 != bytes.size()) {
      throw FormatError("embedding dump size does not match header");
    }
    FeatureGrid<float> grid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (float& v : grid.values()) v = r.f32();
    return grid;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Grid2<Rgb8> feature_map_image(const FeatureGrid<float>& grid) {
  const int n = grid.pixels();
  std::vector<double> summed(static_cast<std::size_t>(n) * 3, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto px = grid.pixel(i);
    for (int c = 0; c < grid.channels(); ++c) summed[static_cast<std::size_t>(i) * 3 + c % 3] += px[c];
  }
  std::array<double, 3> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], summed[static_cast<std::size_t>(i) * 3 + c]);
      hi[c] = std::max(hi[c], summed[static_cast<std::size_t>(i) * 3 + c]);
    }
  }
  Grid2<Rgb8> out(grid.height(), grid.width());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = summed[static_cast<std::size_t>(i) * 3 + c];
      out[i][c] = hi[c] > lo[c] ? static_cast<std::uint8_t>(std::lround(255.0 * (v - lo[c]) / (hi[c] - lo[c]))) : 128;
    }
  }
  return out;
}

Rgb8 palette_color(Label id) {
  int v = static_cast<int>(static_cast<unsigned>(id) & 0xff);
  Rgb8 c{0, 0, 0};
  for (int shift = 7; shift >= 0 && v; --shift) {
    for (int ch = 0; ch < 3; ++ch) c[ch] |= static_cast<std::uint8_t>(((v >> ch) & 1) << shift);
    v >>= 3;
  }
  return c;
}

Grid2<Rgb8> render_labels(const LabelMask& mask) {
  Grid2<Rgb8> out(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = palette_color(mask[i]);
  return out;
}

}  // namespace embedseg
