#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace embedseg {

/// Raised when caller-supplied data violates an operation's preconditions.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration cannot be satisfied (e.g. unreachable constraints).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3f = std::array<float, 3>;
using Label = std::int32_t;

/// Dense row-major H x W grid.
template <class T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw InputError("Grid2: dimensions must be positive, got " + std::to_string(height) +
                       "x" + std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }
  const T& operator()(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * width_ + c];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(int h, int w) const { return height_ == h && width_ == w; }
  template <class U>
  bool same_shape(const Grid2<U>& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  friend bool operator==(const Grid2&, const Grid2&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Row-major n x C matrix; rows are embedding vectors.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw InputError("Matrix: negative dimensions");
    data_.assign(static_cast<std::size_t>(rows) * cols, fill);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  std::span<T> row(int i) { return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const T> row(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)};
  }
  T& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  const T& operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  void append_row(std::span<const T> v) {
    if (rows_ == 0 && cols_ == 0) cols_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != cols_) throw InputError("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), v.begin(), v.end());
    ++rows_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// H x W x C feature map, channel-last.
template <class T>
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(int height, int width, int channels, T fill = T{})
      : height_(height), width_(width), channels_(channels) {
    if (height < 1 || width < 1 || channels < 1) throw InputError("FeatureGrid: dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int pixels() const { return height_ * width_; }

  std::span<T> pixel(int index) {
    return {data_.data() + static_cast<std::size_t>(index) * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<const T> pixel(int index) const {
    return {data_.data() + static_cast<std::size_t>(index) * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<T> pixel(int r, int c) { return pixel(r * width_ + c); }
  std::span<const T> pixel(int r, int c) const { return pixel(r * width_ + c); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  /// Pixels as the rows of an n x C matrix.
  Matrix<T> as_rows() const {
    Matrix<T> m(pixels(), channels_);
    std::copy(data_.begin(), data_.end(), m.values().begin());
    return m;
  }

  template <class U>
  FeatureGrid<U> cast() const {
    FeatureGrid<U> out(height_, width_, channels_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.values()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Unit-normalized per-pixel embeddings.
using EmbeddingGrid = FeatureGrid<float>;
using LabelMask = Grid2<Label>;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("CameraIntrinsics: focal lengths must be positive");
  }
  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct RgbdFrame {
  Grid2<Vec3f> rgb;
  Grid2<float> depth;  // meters, 0 = missing
  CameraIntrinsics intrinsics;
  Grid2<Vec3f> cloud;  // organized XYZ

  int height() const { return depth.height(); }
  int width() const { return depth.width(); }
};

/// A frame together with its instance ground truth.
struct LabeledFrame {
  RgbdFrame frame;
  LabelMask truth;
};

/// Pinhole back-projection into an organized point cloud.
Grid2<Vec3f> backproject(const Grid2<float>& depth, const CameraIntrinsics& intr);

/// Assembles a frame and derives its cloud from depth.
RgbdFrame make_frame(Grid2<Vec3f> rgb, Grid2<float> depth, const CameraIntrinsics& intr);

/// Divides each pixel vector by its norm. Zero vectors become e1.
template <class T>
FeatureGrid<T> normalize_embeddings(FeatureGrid<T> raw);

/// In-place unit normalization of one vector; returns the original norm.
template <class T>
double normalize_in_place(std::span<T> v);

template <class T>
double dot(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

/// d(a, b) = (1 - a.b) / 2, clamped to [0, 1].
template <class T>
double cosine_distance(std::span<const T> a, std::span<const T> b) {
  const double d = 0.5 * (1.0 - dot(a, b));
  return d < 0.0 ? 0.0 : (d > 1.0 ? 1.0 : d);
}

/// Remaps identifiers to {0..K}, keeping 0 and first-occurrence order.
LabelMask compact_labels(const LabelMask& mask);

/// Largest label value present (0 for all-background).
Label max_label(const LabelMask& mask);

/// Sorted distinct labels present in the mask.
std::vector<Label> distinct_labels(const LabelMask& mask);

}  // namespace embedseg
