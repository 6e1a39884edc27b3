// Independent reference implementations used only by tests. Everything here is
// deliberately naive (double loops, double precision) and shares no code with
// the library paths it checks.
#pragma once

#include <cmath>
#include <vector>

#include "ecnet/tensor.hpp"

namespace oracle {

using ecnet::Index;

// Plain cross-correlation, zero padding, arbitrary stride.
inline ecnet::Tensor<double> naive_conv2d(const ecnet::Tensor<double>& x,
                                          const ecnet::Tensor<double>& w,
                                          const ecnet::Tensor<double>& b, Index stride,
                                          Index pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const Index N = xs.n(), C = xs.c(), H = xs.h(), W = xs.w();
  const Index OC = ws[0], K = ws[2];
  const Index OH = (H + 2 * pad - K) / stride + 1;
  const Index OW = (W + 2 * pad - K) / stride + 1;
  auto y = ecnet::Tensor<double>::zeros({N, OC, OH, OW});
  for (Index n = 0; n < N; ++n)
    for (Index oc = 0; oc < OC; ++oc)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox) {
          double acc = b.values()[oc];
          for (Index c = 0; c < C; ++c)
            for (Index ky = 0; ky < K; ++ky)
              for (Index kx = 0; kx < K; ++kx) {
                const Index iy = oy * stride - pad + ky;
                const Index ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x.at({n, c, iy, ix}) * w.at({oc, c, ky, kx});
              }
          y.set({n, oc, oy, ox}, acc);
        }
  return y;
}

inline Index reflect101(Index i, Index n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Per-pixel windowed mean and population std with mirror (reflect-101) borders.
inline void naive_local_stats(const ecnet::Tensor<double>& img, Index window,
                              ecnet::Tensor<double>& mean, ecnet::Tensor<double>& stdev) {
  const auto& s = img.shape();  // CHW
  const Index C = s[0], H = s[1], W = s[2];
  mean = ecnet::Tensor<double>::zeros(s);
  stdev = ecnet::Tensor<double>::zeros(s);
  const Index r = window / 2;
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j) {
        double sum = 0, sum2 = 0;
        for (Index di = -r; di <= r; ++di)
          for (Index dj = -r; dj <= r; ++dj) {
            const double v = img.at({c, reflect101(i + di, H), reflect101(j + dj, W)});
            sum += v;
            sum2 += v * v;
          }
        const double area = static_cast<double>(window * window);
        const double mu = sum / area;
        mean.set({c, i, j}, mu);
        stdev.set({c, i, j}, std::sqrt(std::max(0.0, sum2 / area - mu * mu)));
      }
}

inline ecnet::Tensor<double> naive_rlcn(const ecnet::Tensor<double>& img, Index window,
                                        double epsilon) {
  ecnet::Tensor<double> mu, sigma;
  naive_local_stats(img, window, mu, sigma);
  auto out = ecnet::Tensor<double>::zeros(img.shape());
  for (size_t i = 0; i < out.values().size(); ++i) {
    const double num = std::max(img.values()[i] - mu.values()[i], 0.0);
    out.values()[i] = num / (sigma.values()[i] + epsilon);
  }
  return out;
}

// Direct per-window SSIM with a Gaussian weighting, valid region only,
// averaged over channels and window positions.
inline double naive_ssim(const ecnet::Tensor<double>& x, const ecnet::Tensor<double>& y,
                         Index window = 11, double sigma = 1.5, double c1 = 0.01 * 0.01,
                         double c2 = 0.03 * 0.03) {
  const auto& s = x.shape();  // CHW
  const Index C = s[0], H = s[1], W = s[2];
  const Index r = window / 2;
  std::vector<double> kern(static_cast<size_t>(window * window));
  double ksum = 0;
  for (Index i = 0; i < window; ++i)
    for (Index j = 0; j < window; ++j) {
      const double dy = static_cast<double>(i - r), dx = static_cast<double>(j - r);
      kern[static_cast<size_t>(i * window + j)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      ksum += kern[static_cast<size_t>(i * window + j)];
    }
  for (double& k : kern) k /= ksum;

  double total = 0;
  Index count = 0;
  for (Index c = 0; c < C; ++c)
    for (Index i = r; i < H - r; ++i)
      for (Index j = r; j < W - r; ++j) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (Index di = -r; di <= r; ++di)
          for (Index dj = -r; dj <= r; ++dj) {
            const double k = kern[static_cast<size_t>((di + r) * window + dj + r)];
            const double xv = x.at({c, i + di, j + dj});
            const double yv = y.at({c, i + di, j + dj});
            mx += k * xv;
            my += k * yv;
            mxx += k * xv * xv;
            myy += k * yv * yv;
            mxy += k * xv * yv;
          }
        const double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

inline double naive_psnr(const ecnet::Tensor<double>& x, const ecnet::Tensor<double>& y,
                         double peak = 1.0) {
  double mse = 0;
  for (size_t i = 0; i < x.values().size(); ++i) {
    const double d = x.values()[i] - y.values()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.values().size());
  if (mse == 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

// Mean over scales of MSE(map_s, mask average-pooled by 2^s), double loops.
inline double naive_attention_loss(const std::vector<ecnet::Tensor<double>>& maps,
                                   const ecnet::Tensor<double>& mask) {
  const Index H = mask.shape().h(), W = mask.shape().w();
  double total = 0;
  for (size_t s = 0; s < maps.size(); ++s) {
    const Index f = Index(1) << s;
    const Index OH = H / f, OW = W / f;
    double mse = 0;
    for (Index n = 0; n < mask.shape().n(); ++n)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox) {
          double acc = 0;
          for (Index dy = 0; dy < f; ++dy)
            for (Index dx = 0; dx < f; ++dx) acc += mask.at({n, 0, oy * f + dy, ox * f + dx});
          const double d = maps[s].at({n, 0, oy, ox}) - acc / static_cast<double>(f * f);
          mse += d * d;
        }
    total += mse / static_cast<double>(mask.shape().n() * OH * OW);
  }
  return total / static_cast<double>(maps.size());
}

}  // namespace oracle
