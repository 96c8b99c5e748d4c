#include "embedseg/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "embedseg/binary_io.hpp"

namespace embedseg {

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::kEarly: return "early";
    case Fusion::kLateAdd: return "add";
    case Fusion::kLateConcat: return "concat";
    case Fusion::kRgbOnly: return "rgb";
    case Fusion::kDepthOnly: return "depth";
  }
  return "unknown";
}

Fusion parse_fusion(const std::string& name) {
  if (name == "early") return Fusion::kEarly;
  if (name == "add") return Fusion::kLateAdd;
  if (name == "concat") return Fusion::kLateConcat;
  if (name == "rgb") return Fusion::kRgbOnly;
  if (name == "depth") return Fusion::kDepthOnly;
  throw InputError("unknown fusion mode '" + name + "' (expected early|add|concat|rgb|depth)");
}

int EmbedderConfig::output_dim() const {
  return fusion == Fusion::kLateConcat && concat_keep_2c ? 2 * embedding_dim : embedding_dim;
}

int EmbedderConfig::tower_count() const {
  return fusion == Fusion::kLateAdd || fusion == Fusion::kLateConcat ? 2 : 1;
}

void EmbedderConfig::validate() const {
  if (embedding_dim < 2) throw InputError("EmbedderConfig: embedding_dim must be >= 2");
  for (int w : widths) {
    if (w < 1) throw InputError("EmbedderConfig: layer widths must be >= 1");
  }
  if (!(learning_rate >= 0.0)) throw InputError("EmbedderConfig: learning_rate must be >= 0");
  if (epochs < 0 || batch_size < 1) throw InputError("EmbedderConfig: invalid epochs / batch_size");
}

std::size_t ParamShape::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

template <class T>
ConvLayer<T> make_layer(int in, int out, int kernel, int stride, std::mt19937_64& rng) {
  ConvLayer<T> l{in, out, kernel, stride, {}, {}};
  const double fan_in = static_cast<double>(in) * kernel * kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  l.weight.resize(static_cast<std::size_t>(out) * in * kernel * kernel);
  for (auto& w : l.weight) w = static_cast<T>(dist(rng));
  l.bias.assign(out, T{0});
  return l;
}

// Zero-padded copy of the input (pad 1 for 3x3 kernels).
template <class T>
Tensor3<T> pad_input(const Tensor3<T>& in, int pad) {
  if (pad == 0) return in;
  Tensor3<T> p(in.channels, in.height + 2 * pad, in.width + 2 * pad, T{0});
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      std::copy_n(in.plane(c) + y * in.width, in.width,
                  p.plane(c) + (y + pad) * p.width + pad);
    }
  }
  return p;
}

template <class T>
Tensor3<T> conv_forward(const Tensor3<T>& in, const ConvLayer<T>& l) {
  const int pad = l.kernel / 2;
  const int out_h = (in.height + 2 * pad - l.kernel) / l.stride + 1;
  const int out_w = (in.width + 2 * pad - l.kernel) / l.stride + 1;
  const Tensor3<T> p = pad_input(in, pad);
  Tensor3<T> out(l.out, out_h, out_w);
  const int kk = l.kernel * l.kernel;
  for (int co = 0; co < l.out; ++co) {
    T* dst_plane = out.plane(co);
    std::fill_n(dst_plane, out_h * out_w, l.bias[co]);
    for (int ci = 0; ci < l.in; ++ci) {
      const T* src_plane = p.plane(ci);
      const T* w = l.weight.data() + (static_cast<std::size_t>(co) * l.in + ci) * kk;
      for (int ky = 0; ky < l.kernel; ++ky) {
        for (int kx = 0; kx < l.kernel; ++kx) {
          const T wv = w[ky * l.kernel + kx];
          for (int y = 0; y < out_h; ++y) {
            const T* src = src_plane + (y * l.stride + ky) * p.width + kx;
            T* dst = dst_plane + y * out_w;
            if (l.stride == 1) {
              for (int x = 0; x < out_w; ++x) dst[x] += wv * src[x];
            } else {
              for (int x = 0; x < out_w; ++x) dst[x] += wv * src[x * l.stride];
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients; returns the gradient w.r.t. the input
// when `want_input` is set.
template <class T>
Tensor3<T> conv_backward(const Tensor3<T>& in, const ConvLayer<T>& l, const Tensor3<T>& grad_out,
                         std::vector<T>& grad_w, std::vector<T>& grad_b, bool want_input) {
  const int pad = l.kernel / 2;
  const Tensor3<T> p = pad_input(in, pad);
  Tensor3<T> grad_p;
  if (want_input) grad_p = Tensor3<T>(p.channels, p.height, p.width, T{0});
  const int out_h = grad_out.height, out_w = grad_out.width;
  const int kk = l.kernel * l.kernel;
  // Per-column partial sums keep the weight-gradient loop vectorizable.
  std::vector<T> part(out_w);
  for (int co = 0; co < l.out; ++co) {
    const T* g_plane = grad_out.plane(co);
    T gb = 0;
    for (int i = 0; i < out_h * out_w; ++i) gb += g_plane[i];
    grad_b[co] += gb;
    for (int ci = 0; ci < l.in; ++ci) {
      const T* src_plane = p.plane(ci);
      const std::size_t base = (static_cast<std::size_t>(co) * l.in + ci) * kk;
      for (int ky = 0; ky < l.kernel; ++ky) {
        for (int kx = 0; kx < l.kernel; ++kx) {
          std::fill(part.begin(), part.end(), T{0});
          const T wv = l.weight[base + ky * l.kernel + kx];
          for (int y = 0; y < out_h; ++y) {
            const T* g = g_plane + y * out_w;
            const int row = (y * l.stride + ky) * p.width + kx;
            const T* src = src_plane + row;
            if (l.stride == 1) {
              for (int x = 0; x < out_w; ++x) part[x] += g[x] * src[x];
            } else {
              for (int x = 0; x < out_w; ++x) part[x] += g[x] * src[x * l.stride];
            }
            if (want_input) {
              T* gp = grad_p.plane(ci) + row;
              if (l.stride == 1) {
                for (int x = 0; x < out_w; ++x) gp[x] += wv * g[x];
              } else {
                for (int x = 0; x < out_w; ++x) gp[x * l.stride] += wv * g[x];
              }
            }
          }
          T acc = 0;
          for (T v : part) acc += v;
          grad_w[base + ky * l.kernel + kx] += acc;
        }
      }
    }
  }
  if (!want_input) return {};
  if (pad == 0) return grad_p;
  Tensor3<T> grad_in(in.channels, in.height, in.width);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      std::copy_n(grad_p.plane(c) + (y + pad) * grad_p.width + pad, in.width,
                  grad_in.plane(c) + y * in.width);
    }
  }
  return grad_in;
}

template <class T>
void relu_in_place(Tensor3<T>& t) {
  for (auto& v : t.data) v = v > T{0} ? v : T{0};
}

// Zeroes gradient entries whose activation was clipped.
template <class T>
void relu_mask(Tensor3<T>& grad, const Tensor3<T>& activated) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activated.data[i] > T{0})) grad.data[i] = T{0};
  }
}

template <class T>
Tensor3<T> upsample2(const Tensor3<T>& in) {
  Tensor3<T> out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const T* src = in.plane(c) + (y / 2) * in.width;
      T* dst = out.plane(c) + y * out.width;
      for (int x = 0; x < out.width; ++x) dst[x] = src[x / 2];
    }
  }
  return out;
}

template <class T>
Tensor3<T> upsample2_backward(const Tensor3<T>& grad) {
  Tensor3<T> out(grad.channels, grad.height / 2, grad.width / 2, T{0});
  for (int c = 0; c < grad.channels; ++c) {
    for (int y = 0; y < grad.height; ++y) {
      const T* src = grad.plane(c) + y * grad.width;
      T* dst = out.plane(c) + (y / 2) * out.width;
      for (int x = 0; x < grad.width; ++x) dst[x / 2] += src[x];
    }
  }
  return out;
}

template <class T>
Tensor3<T> tower_forward(const Tower<T>& tower, const Tensor3<T>& input, TowerCache<T>* cache) {
  Tensor3<T> r1 = conv_forward(input, tower.layers[0]);
  relu_in_place(r1);
  Tensor3<T> r2 = conv_forward(r1, tower.layers[1]);
  relu_in_place(r2);
  Tensor3<T> r3 = conv_forward(r2, tower.layers[2]);
  relu_in_place(r3);
  Tensor3<T> up = upsample2(r3);
  Tensor3<T> out = conv_forward(up, tower.layers[3]);
  if (cache) {
    cache->input = input;
    cache->r1 = std::move(r1);
    cache->r2 = std::move(r2);
    cache->r3 = std::move(r3);
    cache->up = std::move(up);
  }
  return out;
}

// grads: 8 entries (weight, bias) x 4 layers starting at `offset`.
template <class T>
void tower_backward(const Tower<T>& tower, const TowerCache<T>& cache, const Tensor3<T>& grad_out,
                    ParamSet<T>& grads, std::size_t offset) {
  auto& L = tower.layers;
  Tensor3<T> g_up = conv_backward(cache.up, L[3], grad_out, grads[offset + 6], grads[offset + 7], true);
  Tensor3<T> g3 = upsample2_backward(g_up);
  relu_mask(g3, cache.r3);
  Tensor3<T> g2 = conv_backward(cache.r2, L[2], g3, grads[offset + 4], grads[offset + 5], true);
  relu_mask(g2, cache.r2);
  Tensor3<T> g1 = conv_backward(cache.r1, L[1], g2, grads[offset + 2], grads[offset + 3], true);
  relu_mask(g1, cache.r1);
  conv_backward(cache.input, L[0], g1, grads[offset + 0], grads[offset + 1], false);
}

template <class T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
  Tensor3<T> out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

template <class T>
FeatureGrid<T> to_channel_last(const Tensor3<T>& t) {
  FeatureGrid<T> out(t.height, t.width, t.channels);
  const int n = t.height * t.width;
  for (int c = 0; c < t.channels; ++c) {
    const T* src = t.plane(c);
    auto dst = out.values();
    for (int i = 0; i < n; ++i) dst[static_cast<std::size_t>(i) * t.channels + c] = src[i];
  }
  return out;
}

template <class T>
Tensor3<T> to_channel_first(const FeatureGrid<T>& g) {
  Tensor3<T> out(g.channels(), g.height(), g.width());
  const int n = g.pixels();
  for (int c = 0; c < g.channels(); ++c) {
    T* dst = out.plane(c);
    const auto src = g.values();
    for (int i = 0; i < n; ++i) dst[i] = src[static_cast<std::size_t>(i) * g.channels() + c];
  }
  return out;
}

}  // namespace

template <class T>
Embedder<T>::Embedder(const EmbedderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int towers = cfg_.tower_count();
  const int in_ch = cfg_.fusion == Fusion::kEarly ? 6 : 3;
  const auto& w = cfg_.widths;
  for (int t = 0; t < towers; ++t) {
    Tower<T> tower;
    tower.layers[0] = make_layer<T>(in_ch, w[0], 3, 1, rng);
    tower.layers[1] = make_layer<T>(w[0], w[1], 3, 2, rng);
    tower.layers[2] = make_layer<T>(w[1], w[2], 3, 1, rng);
    tower.layers[3] = make_layer<T>(w[2], cfg_.embedding_dim, 3, 1, rng);
    towers_.push_back(std::move(tower));
  }
  if (cfg_.fusion == Fusion::kLateConcat && !cfg_.concat_keep_2c) {
    projection_ = make_layer<T>(2 * cfg_.embedding_dim, cfg_.embedding_dim, 1, 1, rng);
  }
}

template <class T>
std::vector<Tensor3<T>> Embedder<T>::tower_inputs(const RgbdFrame& frame) const {
  const int h = frame.height(), w = frame.width();
  if (h % 2 != 0 || w % 2 != 0) {
    throw InputError("embedder: frame size " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be divisible by 2");
  }
  if (!frame.rgb.same_shape(frame.depth) || !frame.cloud.same_shape(frame.depth)) {
    throw InputError("embedder: frame grids disagree in size");
  }
  Tensor3<T> rgb(3, h, w), xyz(3, h, w);
  for (int c = 0; c < 3; ++c) {
    T* rp = rgb.plane(c);
    T* xp = xyz.plane(c);
    const double mean = stats.xyz_mean[c];
    const double sd = stats.xyz_std[c];
    for (int i = 0; i < h * w; ++i) {
      rp[i] = static_cast<T>(frame.rgb[i][c]);
      xp[i] = static_cast<T>((frame.cloud[i][c] - mean) / sd);
    }
  }
  switch (cfg_.fusion) {
    case Fusion::kEarly: return {concat_channels(rgb, xyz)};
    case Fusion::kLateAdd:
    case Fusion::kLateConcat: return {std::move(rgb), std::move(xyz)};
    case Fusion::kRgbOnly: return {std::move(rgb)};
    case Fusion::kDepthOnly: return {std::move(xyz)};
  }
  return {};
}

template <class T>
FeatureGrid<T> Embedder<T>::forward_raw(const RgbdFrame& frame, Activations<T>* cache) const {
  auto inputs = tower_inputs(frame);
  std::vector<Tensor3<T>> outs;
  if (cache) {
    cache->towers.assign(towers_.size(), {});
    cache->tower_out.clear();
  }
  for (std::size_t t = 0; t < towers_.size(); ++t) {
    outs.push_back(tower_forward(towers_[t], inputs[t], cache ? &cache->towers[t] : nullptr));
  }
  Tensor3<T> raw;
  switch (cfg_.fusion) {
    case Fusion::kLateAdd:
      raw = std::move(outs[0]);
      for (std::size_t i = 0; i < raw.data.size(); ++i) raw.data[i] += outs[1].data[i];
      break;
    case Fusion::kLateConcat: {
      Tensor3<T> cat = concat_channels(outs[0], outs[1]);
      raw = has_projection() ? conv_forward(cat, projection_) : cat;
      if (cache) cache->tower_out = {std::move(cat)};
      break;
    }
    default:
      raw = std::move(outs[0]);
  }
  return to_channel_last(raw);
}

template <class T>
EmbeddingGrid Embedder<T>::forward(const RgbdFrame& frame) const {
  return normalize_embeddings(forward_raw(frame).template cast<float>());
}

template <class T>
ParamSet<T> Embedder<T>::backward(const Activations<T>& cache, const FeatureGrid<T>& upstream) const {
  ParamSet<T> grads = zeros_like();
  if (cache.towers.size() != towers_.size()) throw InputError("embedder backward: cache mismatch");
  if (upstream.channels() != cfg_.output_dim()) {
    throw InputError("embedder backward: upstream gradient has wrong channel count");
  }
  const Tensor3<T> g = to_channel_first(upstream);
  switch (cfg_.fusion) {
    case Fusion::kLateAdd:
      tower_backward(towers_[0], cache.towers[0], g, grads, 0);
      tower_backward(towers_[1], cache.towers[1], g, grads, 8);
      break;
    case Fusion::kLateConcat: {
      Tensor3<T> g_cat = has_projection()
                             ? conv_backward(cache.tower_out.at(0), projection_, g, grads[16], grads[17], true)
                             : g;
      const int c = cfg_.embedding_dim;
      const std::size_t half = static_cast<std::size_t>(c) * g_cat.height * g_cat.width;
      Tensor3<T> g0(c, g_cat.height, g_cat.width), g1(c, g_cat.height, g_cat.width);
      std::copy_n(g_cat.data.begin(), half, g0.data.begin());
      std::copy_n(g_cat.data.begin() + half, half, g1.data.begin());
      tower_backward(towers_[0], cache.towers[0], g0, grads, 0);
      tower_backward(towers_[1], cache.towers[1], g1, grads, 8);
      break;
    }
    default:
      tower_backward(towers_[0], cache.towers[0], g, grads, 0);
  }
  return grads;
}

template <class T>
std::vector<std::span<T>> Embedder<T>::parameters() {
  std::vector<std::span<T>> p;
  for (auto& t : towers_) {
    for (auto& l : t.layers) {
      p.emplace_back(l.weight);
      p.emplace_back(l.bias);
    }
  }
  if (has_projection()) {
    p.emplace_back(projection_.weight);
    p.emplace_back(projection_.bias);
  }
  return p;
}

template <class T>
std::vector<std::span<const T>> Embedder<T>::parameters() const {
  std::vector<std::span<const T>> p;
  for (const auto& t : towers_) {
    for (const auto& l : t.layers) {
      p.emplace_back(l.weight);
      p.emplace_back(l.bias);
    }
  }
  if (has_projection()) {
    p.emplace_back(projection_.weight);
    p.emplace_back(projection_.bias);
  }
  return p;
}

template <class T>
std::vector<ParamShape> Embedder<T>::shapes() const {
  std::vector<ParamShape> s;
  auto add = [&](const ConvLayer<T>& l) {
    const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
    s.push_back({{u(l.out), u(l.in), u(l.kernel), u(l.kernel)}});
    s.push_back({{u(l.out)}});
  };
  for (const auto& t : towers_) {
    for (const auto& l : t.layers) add(l);
  }
  if (has_projection()) add(projection_);
  return s;
}

template <class T>
ParamSet<T> Embedder<T>::zeros_like() const {
  ParamSet<T> z;
  for (const auto& p : parameters()) z.emplace_back(p.size(), T{0});
  return z;
}

template class Embedder<float>;
template class Embedder<double>;

InputStats fit_input_stats(std::span<const RgbdFrame* const> frames) {
  InputStats s;
  std::array<double, 3> sum{}, sq{};
  double n = 0;
  for (const RgbdFrame* f : frames) {
    for (const auto& p : f->cloud.values()) {
      for (int c = 0; c < 3; ++c) {
        sum[c] += p[c];
        sq[c] += static_cast<double>(p[c]) * p[c];
      }
      n += 1;
    }
  }
  if (n == 0) return s;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    const double var = std::max(sq[c] / n - mean * mean, 0.0);
    s.xyz_mean[c] = static_cast<float>(mean);
    s.xyz_std[c] = static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
  }
  return s;
}

namespace {
constexpr std::uint32_t kModelVersion = 1;
}

std::vector<std::uint8_t> serialize_model(const EmbedderModel& model) {
  const auto& cfg = model.config();
  ByteWriter w;
  w.bytes("ESEG");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(cfg.fusion));
  w.u32(static_cast<std::uint32_t>(cfg.embedding_dim));
  for (int v : cfg.widths) w.u32(static_cast<std::uint32_t>(v));
  w.u32(cfg.concat_keep_2c ? 1 : 0);
  w.f64(cfg.learning_rate);
  w.u32(static_cast<std::uint32_t>(cfg.epochs));
  w.u32(static_cast<std::uint32_t>(cfg.batch_size));
  w.u32(static_cast<std::uint32_t>(cfg.seed));
  w.u32(static_cast<std::uint32_t>(cfg.seed >> 32));
  for (float v : model.stats.xyz_mean) w.f32(v);
  for (float v : model.stats.xyz_std) w.f32(v);
  const auto shapes = model.shapes();
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(shapes[i].dims.size()));
    for (auto d : shapes[i].dims) w.u32(d);
    for (float v : params[i]) w.f32(v);
  }
  return w.take();
}

EmbedderModel deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect("ESEG");
  const auto version = r.u32();
  if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version));
  EmbedderConfig cfg;
  const auto fusion = r.u32();
  if (fusion > static_cast<std::uint32_t>(Fusion::kDepthOnly)) throw FormatError("bad fusion tag");
  cfg.fusion = static_cast<Fusion>(fusion);
  cfg.embedding_dim = static_cast<int>(r.u32());
  for (int& v : cfg.widths) v = static_cast<int>(r.u32());
  cfg.concat_keep_2c = r.u32() != 0;
  cfg.learning_rate = r.f64();
  cfg.epochs = static_cast<int>(r.u32());
  cfg.batch_size = static_cast<int>(r.u32());
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  cfg.seed = lo | (hi << 32);
  if (cfg.embedding_dim < 2 || cfg.embedding_dim > 4096) throw FormatError("bad embedding dim");
  for (int v : cfg.widths) {
    if (v < 1 || v > 4096) throw FormatError("bad layer width");
  }
  EmbedderModel model(cfg);
  for (float& v : model.stats.xyz_mean) v = r.f32();
  for (float& v : model.stats.xyz_std) v = r.f32();
  const auto shapes = model.shapes();
  auto params = model.parameters();
  if (r.u32() != params.size()) throw FormatError("parameter tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto rank = r.u32();
    if (rank != shapes[i].dims.size()) throw FormatError("parameter rank mismatch");
    for (auto d : shapes[i].dims) {
      if (r.u32() != d) throw FormatError("parameter shape mismatch");
    }
    for (float& v : params[i]) v = r.f32();
  }
  if (!r.done()) throw FormatError("trailing bytes after model");
  return model;
}

void save_model(const EmbedderModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_model(model));
}

EmbedderModel load_model(const std::filesystem::path& path) {
  try {
    return deserialize_model(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace embedseg
