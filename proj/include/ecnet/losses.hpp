#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ecnet/models.hpp"
#include "ecnet/ops.hpp"

namespace ecnet {

/// Balance coefficients of the composite objective and of the per-stage sum.
struct LossWeights {
  double embed = 0.02;
  double att = 0.1;
  double image = 1.0;
  std::vector<double> stage;  // lambda_t, one per recurrent stage

  static std::vector<double> default_stage_weights(Index stages) {
    if (stages == 1) return {1.0};
    std::vector<double> w(static_cast<size_t>(stages), 0.5);
    w.back() = 1.5;
    return w;
  }

  void validate() const {
    if (embed < 0 || att < 0 || image < 0)
      throw std::invalid_argument("LossWeights: negative component weight");
    for (double v : stage)
      if (v < 0) throw std::invalid_argument("LossWeights: negative stage weight");
  }
};

struct SsimParams {
  Index window = 11;
  double sigma = 1.5;
  double peak = 1.0;

  double c1() const { return (0.01 * peak) * (0.01 * peak); }
  double c2() const { return (0.03 * peak) * (0.03 * peak); }
};

// ---------------------------------------------------------------------------
// Component losses
// ---------------------------------------------------------------------------

/// Rain embedding loss: mean absolute difference between the predicted and the
/// ideal embedding.
template <typename T>
Tensor<T> loss_embed(Tape<T>& g, const Tensor<T>& embedding_ideal, const Tensor<T>& embedding) {
  detail::require_same_shape(embedding_ideal, embedding, "loss_embed");
  return reduce_mean(g, abs_val(g, sub(g, embedding, embedding_ideal)));
}

/// Attention supervision: per scale, mean squared error between the predicted
/// map and the ground-truth mask average-pooled to that scale; averaged over
/// the S-1 skip scales.
template <typename T>
Tensor<T> loss_att(Tape<T>& g, const std::vector<Tensor<T>>& maps, const Tensor<T>& mask) {
  if (maps.empty()) throw std::invalid_argument("loss_att: no attention maps");
  Tensor<T> acc;
  for (size_t s = 0; s < maps.size(); ++s) {
    Tensor<T> target = avg_pool2d(g, mask, Index(1) << s);
    detail::require_same_shape(maps[s], target, "loss_att");
    auto d = sub(g, maps[s], target);
    auto mse = reduce_mean(g, hadamard(g, d, d));
    acc = s == 0 ? mse : add(g, acc, mse);
  }
  return scale(g, acc, T(1) / static_cast<T>(maps.size()));
}

/// Self-supervision for the autoencoder: mean squared reconstruction error.
template <typename T>
Tensor<T> loss_self(Tape<T>& g, const Tensor<T>& rain, const Tensor<T>& rain_rec) {
  detail::require_same_shape(rain, rain_rec, "loss_self");
  auto d = sub(g, rain_rec, rain);
  return reduce_mean(g, hadamard(g, d, d));
}

namespace detail {

/// Diagonal [C,C,K,K] Gaussian kernel: channel c convolves only with itself,
/// so one dense convolution computes per-channel windowed means.
template <typename T>
Tensor<T> gaussian_window_kernel(Index channels, Index window, double sigma) {
  Tensor<T> k = Tensor<T>::zeros({channels, channels, window, window});
  const Index r = window / 2;
  double sum = 0;
  std::vector<double> kern(static_cast<size_t>(window * window));
  for (Index i = 0; i < window; ++i)
    for (Index j = 0; j < window; ++j) {
      const double dy = static_cast<double>(i - r), dx = static_cast<double>(j - r);
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      kern[static_cast<size_t>(i * window + j)] = v;
      sum += v;
    }
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < window; ++i)
      for (Index j = 0; j < window; ++j)
        k.set({c, c, i, j}, static_cast<T>(kern[static_cast<size_t>(i * window + j)] / sum));
  return k;
}

}  // namespace detail

/// Mean structural similarity over the valid region, Gaussian-weighted local
/// statistics, computed per channel and averaged. Differentiable.
template <typename T>
Tensor<T> ssim(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  detail::require_same_shape(x, y, "ssim");
  const Shape& s = x.shape();
  if (s.rank() != 4) throw std::invalid_argument("ssim: expected NCHW, got " + s.str());
  if (s.h() < p.window || s.w() < p.window)
    throw std::invalid_argument("ssim: image " + s.str() + " smaller than the " +
                                std::to_string(p.window) + "-pixel window");
  const Index C = s.c();
  Tensor<T> kern = detail::gaussian_window_kernel<T>(C, p.window, p.sigma);
  Tensor<T> nobias = Tensor<T>::zeros({C});
  auto win_mean = [&](const Tensor<T>& t) { return conv2d(g, t, kern, nobias, 1, Pad::valid); };

  auto mu_x = win_mean(x);
  auto mu_y = win_mean(y);
  auto raw_xx = win_mean(hadamard(g, x, x));
  auto raw_yy = win_mean(hadamard(g, y, y));
  auto raw_xy = win_mean(hadamard(g, x, y));

  auto mu_xx = hadamard(g, mu_x, mu_x);
  auto mu_yy = hadamard(g, mu_y, mu_y);
  auto mu_xy = hadamard(g, mu_x, mu_y);
  auto var_x = sub(g, raw_xx, mu_xx);
  auto var_y = sub(g, raw_yy, mu_yy);
  auto cov = sub(g, raw_xy, mu_xy);

  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  auto num = hadamard(g, add_scalar(g, scale(g, mu_xy, T(2)), c1),
                      add_scalar(g, scale(g, cov, T(2)), c2));
  auto den = hadamard(g, add_scalar(g, add(g, mu_xx, mu_yy), c1),
                      add_scalar(g, add(g, var_x, var_y), c2));
  return reduce_mean(g, div(g, num, den));
}

/// Image loss: negative SSIM of background against its reconstruction.
template <typename T>
Tensor<T> loss_image(Tape<T>& g, const Tensor<T>& background, const Tensor<T>& background_hat,
                     const SsimParams& p = {}) {
  return neg(g, ssim(g, background, background_hat, p));
}

// ---------------------------------------------------------------------------
// Composite objectives
// ---------------------------------------------------------------------------

template <typename T>
struct StageTargets {
  Tensor<T> background;       // B
  Tensor<T> mask;             // M, [N,1,H,W]
  Tensor<T> embedding_ideal;  // Ẑ_ideal from the frozen autoencoder
};

template <typename T>
struct StageLoss {
  Tensor<T> total;
  double embed = 0, att = 0, image = 0;  // logged component values
};

template <typename T>
StageLoss<T> loss_total(Tape<T>& g, const StageOutput<T>& stage, const StageTargets<T>& targets,
                        const LossWeights& weights, const SsimParams& ssim_params = {}) {
  weights.validate();
  StageLoss<T> out;
  auto img = loss_image(g, targets.background, stage.background, ssim_params);
  out.image = static_cast<double>(img.item());
  out.total = scale(g, img, static_cast<T>(weights.image));
  if (targets.embedding_ideal.defined()) {
    auto emb = loss_embed(g, targets.embedding_ideal, stage.embedding);
    out.embed = static_cast<double>(emb.item());
    out.total = add(g, out.total, scale(g, emb, static_cast<T>(weights.embed)));
  }
  if (!stage.attention.empty()) {
    auto att = loss_att(g, stage.attention, targets.mask);
    out.att = static_cast<double>(att.item());
    out.total = add(g, out.total, scale(g, att, static_cast<T>(weights.att)));
  }
  return out;
}

template <typename T>
struct RecurrentLoss {
  Tensor<T> total;
  std::vector<StageLoss<T>> stages;
};

/// Recursive supervision: the full composite loss at every stage, weighted by
/// lambda_t and summed.
template <typename T>
RecurrentLoss<T> loss_recurrent(Tape<T>& g, const std::vector<StageOutput<T>>& stages,
                                const StageTargets<T>& targets, const LossWeights& weights,
                                const SsimParams& ssim_params = {}) {
  if (stages.empty()) throw std::invalid_argument("loss_recurrent: no stages");
  if (weights.stage.size() != stages.size())
    throw std::invalid_argument("loss_recurrent: " + std::to_string(weights.stage.size()) +
                                " stage weights for " + std::to_string(stages.size()) + " stages");
  RecurrentLoss<T> out;
  for (size_t t = 0; t < stages.size(); ++t) {
    StageLoss<T> st = loss_total(g, stages[t], targets, weights, ssim_params);
    auto weighted = scale(g, st.total, static_cast<T>(weights.stage[t]));
    out.total = t == 0 ? weighted : add(g, out.total, weighted);
    out.stages.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation metrics (not differentiated)
// ---------------------------------------------------------------------------

template <typename T>
double mse(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require_same_shape(x, y, "mse");
  double acc = 0;
  auto xv = x.values();
  auto yv = y.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double d = static_cast<double>(xv[i]) - static_cast<double>(yv[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(xv.size());
}

/// Peak signal-to-noise ratio in dB, capped at the 100 dB sentinel.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
  const double m = mse(x, y);
  if (m == 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / m));
}

/// SSIM as a plain number; accepts CHW or NCHW.
template <typename T>
double ssim_metric(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p = {}) {
  Tape<T> g(false);
  if (x.shape().rank() == 3) {
    const Shape& s = x.shape();
    auto xb = x.reshaped({1, s[0], s[1], s[2]});
    auto yb = y.reshaped({1, s[0], s[1], s[2]});
    return static_cast<double>(ssim(g, xb, yb, p).item());
  }
  return static_cast<double>(ssim(g, x, y, p).item());
}

}  // namespace ecnet
