#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ecnet/random.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

/// One training sample. The additive identity rainy - background == rain holds
/// bit-exactly: the rain layer is recomputed as that exact subtraction after
/// clipping.
struct RainPair {
  Tensor<float> rainy;       // I, [3,H,W] in [0,1]
  Tensor<float> background;  // B, [3,H,W] in [0,1]
  Tensor<float> rain;        // R = I - B, [3,H,W]
  Tensor<float> mask;        // M, [1,H,W] in {0,1}
};

struct StreakParams {
  Index count_min = 12, count_max = 40;
  double length_min = 6.0, length_max = 22.0;    // px
  double width_min = 1.0, width_max = 2.4;       // px
  double angle_min = -20.0, angle_max = 20.0;    // degrees from vertical
  double intensity_min = 0.15, intensity_max = 0.8;
  double blur_sigma = 0.5;
  double mask_tau = 0.05;  // ground-truth mask threshold on the rain layer
  uint64_t seed = 0;

  void validate() const {
    if (count_min < 0 || count_max < count_min)
      throw std::invalid_argument("StreakParams: bad count range");
    if (length_min <= 0 || length_max < length_min)
      throw std::invalid_argument("StreakParams: bad length range");
    if (width_min <= 0 || width_max < width_min)
      throw std::invalid_argument("StreakParams: bad width range");
    if (angle_max < angle_min) throw std::invalid_argument("StreakParams: bad angle range");
    if (intensity_min < 0 || intensity_max < intensity_min || intensity_max > 1.0)
      throw std::invalid_argument("StreakParams: intensities must stay within [0,1]");
    if (blur_sigma < 0) throw std::invalid_argument("StreakParams: negative blur sigma");
    if (mask_tau < 0) throw std::invalid_argument("StreakParams: negative mask threshold");
  }
};

namespace detail {

inline Index reflect_edge(Index i, Index n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline void gaussian_blur_inplace(std::vector<float>& plane, Index h, Index w, double sigma) {
  if (sigma <= 0) return;
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (Index k = -radius; k <= radius; ++k) {
    kernel[static_cast<size_t>(k + radius)] =
        std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    sum += kernel[static_cast<size_t>(k + radius)];
  }
  for (double& k : kernel) k /= sum;

  std::vector<float> tmp(plane.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<size_t>(k + radius)] *
               plane[static_cast<size_t>(y * w + reflect_edge(x + k, w))];
      tmp[static_cast<size_t>(y * w + x)] = static_cast<float>(acc);
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<size_t>(k + radius)] *
               tmp[static_cast<size_t>(reflect_edge(y + k, h) * w + x)];
      plane[static_cast<size_t>(y * w + x)] = static_cast<float>(acc);
    }
}

}  // namespace detail

/// Renders anti-aliased rain streaks into a [3,H,W] layer: line segments with
/// sampled length/width/angle/intensity composited by elementwise max, then a
/// Gaussian blur. Values stay in [0,1]; all three channels are identical.
inline Tensor<float> render_streaks(Index h, Index w, const StreakParams& params, Rng& rng) {
  params.validate();
  std::vector<float> plane(static_cast<size_t>(h * w), 0.0f);
  const Index count = rng.uniform_int(params.count_min, params.count_max);
  for (Index s = 0; s < count; ++s) {
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double len = rng.uniform(params.length_min, params.length_max);
    const double width = rng.uniform(params.width_min, params.width_max);
    const double angle =
        rng.uniform(params.angle_min, params.angle_max) * std::numbers::pi / 180.0;
    const double intensity = rng.uniform(params.intensity_min, params.intensity_max);

    // direction measured from vertical (rain falls downward)
    const double dx = std::sin(angle), dy = std::cos(angle);
    const double x0 = cx - dx * len / 2, y0 = cy - dy * len / 2;
    const double x1 = cx + dx * len / 2, y1 = cy + dy * len / 2;

    const double margin = width / 2 + 1.5;
    const Index ylo = std::max<Index>(0, static_cast<Index>(std::floor(std::min(y0, y1) - margin)));
    const Index yhi = std::min<Index>(h - 1, static_cast<Index>(std::ceil(std::max(y0, y1) + margin)));
    const Index xlo = std::max<Index>(0, static_cast<Index>(std::floor(std::min(x0, x1) - margin)));
    const Index xhi = std::min<Index>(w - 1, static_cast<Index>(std::ceil(std::max(x0, x1) + margin)));

    const double seg_dx = x1 - x0, seg_dy = y1 - y0;
    const double seg_len2 = seg_dx * seg_dx + seg_dy * seg_dy;
    for (Index y = ylo; y <= yhi; ++y)
      for (Index x = xlo; x <= xhi; ++x) {
        const double px = static_cast<double>(x) - x0, py = static_cast<double>(y) - y0;
        double t = seg_len2 > 0 ? (px * seg_dx + py * seg_dy) / seg_len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ddx = px - t * seg_dx, ddy = py - t * seg_dy;
        const double dist = std::sqrt(ddx * ddx + ddy * ddy);
        const double coverage = std::clamp(width / 2 + 0.5 - dist, 0.0, 1.0);
        if (coverage <= 0) continue;
        float& cell = plane[static_cast<size_t>(y * w + x)];
        cell = std::max(cell, static_cast<float>(intensity * coverage));
      }
  }
  detail::gaussian_blur_inplace(plane, h, w, params.blur_sigma);

  Tensor<float> rain = Tensor<float>::zeros({3, h, w});
  auto rv = rain.values();
  for (size_t i = 0; i < plane.size(); ++i) {
    const float v = std::clamp(plane[i], 0.0f, 1.0f);
    rv[i] = v;
    rv[plane.size() + i] = v;
    rv[2 * plane.size() + i] = v;
  }
  return rain;
}

/// M(i,j) = 1 where the maximum over channels of the rain layer exceeds tau.
inline Tensor<float> gt_mask(const Tensor<float>& rain, double tau) {
  const Shape& s = rain.shape();
  if (s.rank() != 3) throw std::invalid_argument("gt_mask: expected CHW, got " + s.str());
  const Index C = s[0], H = s[1], W = s[2];
  Tensor<float> mask = Tensor<float>::zeros({1, H, W});
  auto rv = rain.values();
  auto mv = mask.values();
  const size_t plane = static_cast<size_t>(H * W);
  for (size_t i = 0; i < plane; ++i) {
    float peak = rv[i];
    for (Index c = 1; c < C; ++c) peak = std::max(peak, rv[static_cast<size_t>(c) * plane + i]);
    mv[i] = peak > static_cast<float>(tau) ? 1.0f : 0.0f;
  }
  return mask;
}

/// Additive synthesis: I = clip(B + R_raw, 0, 1), then the stored rain layer is
/// recomputed as I - B so the identity survives clipping exactly.
inline RainPair synthesize_pair(const Tensor<float>& background, const StreakParams& params,
                                Rng& rng) {
  const Shape& s = background.shape();
  if (s.rank() != 3 || s[0] != 3)
    throw std::invalid_argument("synthesize_pair: expected [3,H,W] background, got " + s.str());
  RainPair pair;
  pair.background = background.clone();
  Tensor<float> raw = render_streaks(s[1], s[2], params, rng);

  pair.rainy = Tensor<float>::zeros(s);
  auto bv = pair.background.values();
  auto sv = raw.values();
  auto iv = pair.rainy.values();
  for (size_t i = 0; i < iv.size(); ++i) iv[i] = std::clamp(bv[i] + sv[i], 0.0f, 1.0f);

  pair.rain = Tensor<float>::zeros(s);
  auto rv = pair.rain.values();
  for (size_t i = 0; i < rv.size(); ++i) rv[i] = iv[i] - bv[i];

  pair.mask = gt_mask(pair.rain, params.mask_tau);
  return pair;
}

/// Aligned random crops applied identically to all four planes.
inline std::vector<RainPair> sample_patches(const RainPair& pair, Index size, Index count,
                                            Rng& rng) {
  const Shape& s = pair.rainy.shape();
  const Index H = s[1], W = s[2];
  if (size > H || size > W)
    throw std::invalid_argument("sample_patches: patch " + std::to_string(size) +
                                " exceeds image " + s.str());
  auto crop = [&](const Tensor<float>& src, Index y0, Index x0) {
    const Index C = src.shape()[0];
    Tensor<float> out = Tensor<float>::zeros({C, size, size});
    for (Index c = 0; c < C; ++c)
      for (Index y = 0; y < size; ++y)
        std::copy_n(src.values().data() + (c * H + y0 + y) * W + x0, size,
                    out.values().data() + (c * size + y) * size);
    return out;
  };
  std::vector<RainPair> patches;
  patches.reserve(static_cast<size_t>(count));
  for (Index k = 0; k < count; ++k) {
    const Index y0 = rng.uniform_int(0, H - size);
    const Index x0 = rng.uniform_int(0, W - size);
    patches.push_back({crop(pair.rainy, y0, x0), crop(pair.background, y0, x0),
                       crop(pair.rain, y0, x0), crop(pair.mask, y0, x0)});
  }
  return patches;
}

/// Procedural background texture: a few octaves of bilinear value noise with a
/// shared luminance base and a small per-channel tint. Keeps the repo runnable
/// with no external image downloads.
inline Tensor<float> noise_background(Index h, Index w, Rng& rng) {
  auto octave = [&](Index cells) {
    std::vector<double> grid(static_cast<size_t>((cells + 1) * (cells + 1)));
    for (double& v : grid) v = rng.uniform();
    std::vector<double> out(static_cast<size_t>(h * w));
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double gy = static_cast<double>(y) * cells / static_cast<double>(h);
        const double gx = static_cast<double>(x) * cells / static_cast<double>(w);
        const Index iy = std::min<Index>(static_cast<Index>(gy), cells - 1);
        const Index ix = std::min<Index>(static_cast<Index>(gx), cells - 1);
        const double fy = gy - static_cast<double>(iy), fx = gx - static_cast<double>(ix);
        const double a = grid[static_cast<size_t>(iy * (cells + 1) + ix)];
        const double b = grid[static_cast<size_t>(iy * (cells + 1) + ix + 1)];
        const double c = grid[static_cast<size_t>((iy + 1) * (cells + 1) + ix)];
        const double d = grid[static_cast<size_t>((iy + 1) * (cells + 1) + ix + 1)];
        out[static_cast<size_t>(y * w + x)] =
            (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
      }
    return out;
  };

  std::vector<double> luma(static_cast<size_t>(h * w), 0.0);
  double total_amp = 0;
  Index cells = 4;
  double amp = 1.0;
  for (int o = 0; o < 4; ++o) {
    auto layer = octave(cells);
    for (size_t i = 0; i < luma.size(); ++i) luma[i] += amp * layer[i];
    total_amp += amp;
    amp *= 0.55;
    cells *= 2;
  }

  Tensor<float> bg = Tensor<float>::zeros({3, h, w});
  auto bv = bg.values();
  const size_t plane = luma.size();
  for (Index c = 0; c < 3; ++c) {
    auto tint = octave(4);
    for (size_t i = 0; i < plane; ++i) {
      const double v = 0.08 + 0.74 * (luma[i] / total_amp) + 0.1 * (tint[i] - 0.5);
      bv[static_cast<size_t>(c) * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return bg;
}

}  // namespace ecnet
