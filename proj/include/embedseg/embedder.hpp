#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "embedseg/tensor.hpp"

namespace embedseg {

/// How RGB and the organized point cloud are combined. The two single-input
/// modes exist for input-mode ablations.
enum class Fusion : std::uint32_t {
  kEarly = 0,       // one tower on the 6-channel concatenation
  kLateAdd = 1,     // two towers, outputs summed
  kLateConcat = 2,  // two towers, outputs concatenated (then 1x1-projected)
  kRgbOnly = 3,
  kDepthOnly = 4,
};

std::string to_string(Fusion f);
Fusion parse_fusion(const std::string& name);

struct EmbedderConfig {
  Fusion fusion = Fusion::kLateAdd;
  int embedding_dim = 16;
  std::array<int, 3> widths{16, 24, 24};
  bool concat_keep_2c = false;  // literal 2C output for kLateConcat
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 4;
  std::uint64_t seed = 1;

  int output_dim() const;
  int tower_count() const;
  void validate() const;
};

/// Channel-first activation tensor.
template <class T>
struct Tensor3 {
  int channels = 0, height = 0, width = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T{}) : channels(c), height(h), width(w) {
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }
  T* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const T* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * height * width; }
};

template <class T>
struct ConvLayer {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  std::vector<T> weight;  // [out][in][kernel][kernel]
  std::vector<T> bias;    // [out]
};

/// conv3x3 -> relu -> conv3x3/2 -> relu -> conv3x3 -> relu -> up2x -> conv3x3
template <class T>
struct Tower {
  std::array<ConvLayer<T>, 4> layers;
};

template <class T>
struct TowerCache {
  Tensor3<T> input, r1, r2, r3, up;
};

template <class T>
struct Activations {
  std::vector<TowerCache<T>> towers;
  std::vector<Tensor3<T>> tower_out;  // per-tower raw outputs (concat mode)
};

/// Per-dataset standardization of the XYZ channels.
struct InputStats {
  std::array<float, 3> xyz_mean{0.f, 0.f, 0.f};
  std::array<float, 3> xyz_std{1.f, 1.f, 1.f};
  friend bool operator==(const InputStats&, const InputStats&) = default;
};

/// Parameter-shaped storage: one flat vector per parameter tensor.
template <class T>
using ParamSet = std::vector<std::vector<T>>;

struct ParamShape {
  std::vector<std::uint32_t> dims;
  std::size_t count() const;
};

/// The pixel-embedding network.
template <class T>
class Embedder {
 public:
  Embedder() = default;
  /// Fresh network with seeded fan-in uniform initialization.
  explicit Embedder(const EmbedderConfig& cfg);

  const EmbedderConfig& config() const { return cfg_; }
  EmbedderConfig& mutable_config() { return cfg_; }
  InputStats stats;

  /// Raw (pre-normalization) H x W x output_dim map. H and W must be even.
  FeatureGrid<T> forward_raw(const RgbdFrame& frame, Activations<T>* cache = nullptr) const;
  /// Unit-normalized embeddings.
  EmbeddingGrid forward(const RgbdFrame& frame) const;
  /// Parameter gradients for an upstream gradient on the raw output.
  ParamSet<T> backward(const Activations<T>& cache, const FeatureGrid<T>& upstream) const;

  std::vector<std::span<T>> parameters();
  std::vector<std::span<const T>> parameters() const;
  std::vector<ParamShape> shapes() const;
  ParamSet<T> zeros_like() const;

  std::vector<Tower<T>>& towers() { return towers_; }
  const std::vector<Tower<T>>& towers() const { return towers_; }
  bool has_projection() const { return projection_.out > 0; }

  template <class U>
  Embedder<U> cast() const {
    Embedder<U> out;
    out.cfg_ = cfg_;
    out.stats = stats;
    auto conv = [](const ConvLayer<T>& l) {
      ConvLayer<U> o{l.in, l.out, l.kernel, l.stride, {}, {}};
      o.weight.assign(l.weight.begin(), l.weight.end());
      o.bias.assign(l.bias.begin(), l.bias.end());
      return o;
    };
    for (const auto& t : towers_) {
      Tower<U> u;
      for (int i = 0; i < 4; ++i) u.layers[i] = conv(t.layers[i]);
      out.towers_.push_back(std::move(u));
    }
    out.projection_ = conv(projection_);
    return out;
  }

 private:
  template <class U>
  friend class Embedder;

  std::vector<Tensor3<T>> tower_inputs(const RgbdFrame& frame) const;

  EmbedderConfig cfg_;
  std::vector<Tower<T>> towers_;
  ConvLayer<T> projection_;  // 1x1, only for kLateConcat without keep_2c
};

using EmbedderModel = Embedder<float>;

/// Mean / std of the XYZ channels over a set of frames.
InputStats fit_input_stats(std::span<const RgbdFrame* const> frames);

// Checkpoint format: "ESEG", u32 version, config block, u32 tensor count,
// then per tensor: u32 rank, u32 dims..., little-endian float32 values.
std::vector<std::uint8_t> serialize_model(const EmbedderModel& model);
EmbedderModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const EmbedderModel& model, const std::filesystem::path& path);
EmbedderModel load_model(const std::filesystem::path& path);

}  // namespace embedseg
