#include "embedseg/metric_loss.hpp"

#include <algorithm>
#include <map>
#include <random>

namespace embedseg {

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < delta && delta <= 1.0)) {
    throw InputError("LossConfig: margins must satisfy 0 <= alpha < delta <= 1");
  }
  if (samples_per_object < 1) throw InputError("LossConfig: samples_per_object must be >= 1");
}

std::vector<double> spherical_mean(const Matrix<double>& vectors) {
  if (vectors.rows() == 0) throw InputError("spherical_mean: empty input");
  std::vector<double> sum(vectors.cols(), 0.0);
  for (int i = 0; i < vectors.rows(); ++i) {
    const auto row = vectors.row(i);
    for (int j = 0; j < vectors.cols(); ++j) sum[j] += row[j];
  }
  double sq = 0.0;
  for (double v : sum) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) {
    std::fill(sum.begin(), sum.end(), 0.0);
    sum[0] = 1.0;
    return sum;
  }
  for (double& v : sum) v /= norm;
  return sum;
}

SampledBatch sample_pixels(const LabelMask& mask, int samples_per_object, std::uint64_t seed) {
  if (samples_per_object < 1) throw InputError("sample_pixels: N must be >= 1");
  std::map<Label, std::vector<int>> members;
  for (std::size_t i = 0; i < mask.size(); ++i) members[mask[i]].push_back(static_cast<int>(i));

  std::mt19937_64 rng(seed);
  SampledBatch batch;
  for (auto& [label, pixels] : members) {
    const int take = std::min<int>(samples_per_object, static_cast<int>(pixels.size()));
    // Partial Fisher-Yates: the first `take` entries become a uniform subset.
    for (int i = 0; i < take; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(pixels.size()) - 1);
      std::swap(pixels[i], pixels[pick(rng)]);
    }
    pixels.resize(take);
    batch.objects.push_back({label, std::move(pixels), {}});
  }
  return batch;
}

void gather_embeddings(SampledBatch& batch, const FeatureGrid<double>& embeddings) {
  for (auto& obj : batch.objects) {
    obj.vectors = Matrix<double>(static_cast<int>(obj.pixels.size()), embeddings.channels());
    for (std::size_t i = 0; i < obj.pixels.size(); ++i) {
      const auto src = embeddings.pixel(obj.pixels[i]);
      std::copy(src.begin(), src.end(), obj.vectors.row(static_cast<int>(i)).begin());
    }
  }
}

namespace {

// Intra term of one object: mean squared distance over margin violators.
double object_intra(const Matrix<double>& x, std::span<const double> mu, double alpha) {
  double sum = 0.0;
  int violators = 0;
  for (int i = 0; i < x.rows(); ++i) {
    const double d = 0.5 * (1.0 - dot<double>(mu, x.row(i)));
    if (d - alpha >= 0.0) {
      sum += d * d;
      ++violators;
    }
  }
  return violators == 0 ? 0.0 : sum / violators;
}

Matrix<double> object_means(const SampledBatch& batch) {
  Matrix<double> means;
  for (const auto& obj : batch.objects) means.append_row(spherical_mean(obj.vectors));
  return means;
}

}  // namespace

double intra_loss(const SampledBatch& batch, const LossConfig& cfg) {
  if (batch.objects.empty()) throw InputError("intra_loss: empty batch");
  double total = 0.0;
  for (const auto& obj : batch.objects) {
    const auto mu = spherical_mean(obj.vectors);
    total += object_intra(obj.vectors, mu, cfg.alpha);
  }
  return total / static_cast<double>(batch.objects.size());
}

double inter_loss(const Matrix<double>& means, const LossConfig& cfg) {
  const int k = means.rows();
  if (k < 1) throw InputError("inter_loss: need at least one mean");
  if (k == 1) return 0.0;
  double total = 0.0;
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      const double d = 0.5 * (1.0 - dot<double>(means.row(a), means.row(b)));
      const double hinge = std::max(cfg.delta - d, 0.0);
      total += hinge * hinge;
    }
  }
  return 2.0 * total / (static_cast<double>(k) * (k - 1));
}

namespace {

void check_shapes(const FeatureGrid<double>& raw, const LabelMask& mask) {
  if (raw.height() != mask.height() || raw.width() != mask.width()) {
    throw InputError("metric loss: embedding grid " + std::to_string(raw.height()) + "x" +
                     std::to_string(raw.width()) + " does not match mask " +
                     std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
}

LossValue evaluate(const SampledBatch& batch, const LossConfig& cfg) {
  LossValue v;
  v.means = object_means(batch);
  v.intra = intra_loss(batch, cfg);
  v.inter = inter_loss(v.means, cfg);
  v.total = cfg.lambda_intra * v.intra + cfg.lambda_inter * v.inter;
  return v;
}

}  // namespace

LossValue total_loss(const FeatureGrid<double>& raw, const LabelMask& mask, const LossConfig& cfg) {
  cfg.validate();
  check_shapes(raw, mask);
  const auto unit = normalize_embeddings(raw);
  auto batch = sample_pixels(mask, cfg.samples_per_object, cfg.seed);
  gather_embeddings(batch, unit);
  return evaluate(batch, cfg);
}

LossAndGrad total_loss_and_grad(const FeatureGrid<double>& raw, const LabelMask& mask,
                                const LossConfig& cfg) {
  cfg.validate();
  check_shapes(raw, mask);
  const int channels = raw.channels();
  const auto unit = normalize_embeddings(raw);
  auto batch = sample_pixels(mask, cfg.samples_per_object, cfg.seed);
  gather_embeddings(batch, unit);

  LossAndGrad out;
  out.loss = evaluate(batch, cfg);
  const int k = static_cast<int>(batch.objects.size());

  // Gradient with respect to each spherical mean.
  Matrix<double> grad_mu(k, channels, 0.0);
  // Gradient with respect to each sampled unit vector (direct terms).
  std::vector<Matrix<double>> grad_x(k);

  const double intra_scale = cfg.lambda_intra / k;
  for (int o = 0; o < k; ++o) {
    const auto& x = batch.objects[o].vectors;
    const auto mu = out.loss.means.row(o);
    grad_x[o] = Matrix<double>(x.rows(), channels, 0.0);
    int violators = 0;
    std::vector<double> dist(x.rows());
    for (int i = 0; i < x.rows(); ++i) {
      dist[i] = 0.5 * (1.0 - dot<double>(mu, x.row(i)));
      if (dist[i] - cfg.alpha >= 0.0) ++violators;
    }
    if (violators == 0) continue;
    for (int i = 0; i < x.rows(); ++i) {
      if (dist[i] - cfg.alpha < 0.0) continue;
      // d(d_i^2)/dd_i = 2 d_i ; dd_i/dx_i = -mu/2 ; dd_i/dmu = -x_i/2
      const double coeff = intra_scale * dist[i] / violators;
      auto gx = grad_x[o].row(i);
      auto gm = grad_mu.row(o);
      const auto xi = x.row(i);
      for (int c = 0; c < channels; ++c) {
        gx[c] -= coeff * mu[c];
        gm[c] -= coeff * xi[c];
      }
    }
  }

  if (k > 1) {
    const double inter_scale = cfg.lambda_inter * 2.0 / (static_cast<double>(k) * (k - 1));
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        const auto ma = out.loss.means.row(a);
        const auto mb = out.loss.means.row(b);
        const double d = 0.5 * (1.0 - dot<double>(ma, mb));
        const double hinge = cfg.delta - d;
        if (hinge <= 0.0) continue;
        // d(h^2)/dd = -2h ; dd/dma = -mb/2
        const double coeff = inter_scale * hinge;
        auto ga = grad_mu.row(a);
        auto gb = grad_mu.row(b);
        for (int c = 0; c < channels; ++c) {
          ga[c] += coeff * mb[c];
          gb[c] += coeff * ma[c];
        }
      }
    }
  }

  out.grad = FeatureGrid<double>(raw.height(), raw.width(), channels, 0.0);
  std::vector<double> grad_sum(channels), g(channels);
  for (int o = 0; o < k; ++o) {
    const auto& obj = batch.objects[o];
    const auto mu = out.loss.means.row(o);

    // mu = s / |s| ; dL/ds = (I - mu mu^T) dL/dmu / |s|
    std::vector<double> s(channels, 0.0);
    for (int i = 0; i < obj.vectors.rows(); ++i) {
      const auto xi = obj.vectors.row(i);
      for (int c = 0; c < channels; ++c) s[c] += xi[c];
    }
    double s_norm = 0.0;
    for (double v : s) s_norm += v * v;
    s_norm = std::sqrt(s_norm);
    std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
    if (s_norm >= 1e-12) {
      const auto gm = grad_mu.row(o);
      const double proj = dot<double>(mu, gm);
      for (int c = 0; c < channels; ++c) grad_sum[c] = (gm[c] - proj * mu[c]) / s_norm;
    }

    for (int i = 0; i < obj.vectors.rows(); ++i) {
      const auto xi = obj.vectors.row(i);
      const auto gx = grad_x[o].row(i);
      for (int c = 0; c < channels; ++c) g[c] = gx[c] + grad_sum[c];
      // x = y / |y| ; dL/dy = (I - x x^T) dL/dx / |y|
      const auto y = raw.pixel(obj.pixels[i]);
      double y_norm = 0.0;
      for (double v : y) y_norm += v * v;
      y_norm = std::sqrt(y_norm);
      if (y_norm == 0.0) continue;
      const double proj = dot<double>(xi, std::span<const double>(g));
      auto dst = out.grad.pixel(obj.pixels[i]);
      for (int c = 0; c < channels; ++c) dst[c] = (g[c] - proj * xi[c]) / y_norm;
    }
  }
  return out;
}

}  // namespace embedseg
