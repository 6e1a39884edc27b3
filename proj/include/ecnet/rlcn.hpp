#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "ecnet/tensor.hpp"

// Rectified local contrast normalization: per pixel and channel, the positive
// part of the deviation from the windowed local mean, normalized by the local
// standard deviation. Bright thin structures (rain streaks) light up; anything
// at or below its neighborhood average maps to zero.

namespace ecnet {

struct RlcnParams {
  Index window = 9;        // odd side length of the local square window
  double epsilon = 1e-4;   // stabilizer added to sigma; >0 for production use

  void validate() const {
    if (window < 3 || window % 2 == 0)
      throw std::invalid_argument("RlcnParams: window must be odd and >= 3");
    if (epsilon < 0) throw std::invalid_argument("RlcnParams: negative epsilon");
  }
};

template <typename T>
struct LocalStats {
  Tensor<T> mean;
  Tensor<T> stdev;  // population (window-area normalized)
};

namespace detail {

inline Index reflect101(Index i, Index n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace detail

/// Windowed mean and population standard deviation per pixel and channel, with
/// mirrored borders. Summed-area tables make the cost O(H*W) for any window.
template <typename T>
LocalStats<T> local_mean_std(const Tensor<T>& image, Index window) {
  const Shape& s = image.shape();
  if (s.rank() != 3) throw std::invalid_argument("local_mean_std: expected CHW, got " + s.str());
  const Index C = s[0], H = s[1], W = s[2];
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("local_mean_std: window must be odd and >= 3");
  if (window > 2 * std::min(H, W))
    throw std::invalid_argument("local_mean_std: window " + std::to_string(window) +
                                " too large for " + s.str() + " after reflection");

  LocalStats<T> out{Tensor<T>::zeros(s), Tensor<T>::zeros(s)};
  const Index r = window / 2;
  const Index PH = H + 2 * r, PW = W + 2 * r;
  const double area = static_cast<double>(window * window);

  std::vector<double> padded(static_cast<size_t>(PH * PW));
  std::vector<double> sum1(static_cast<size_t>((PH + 1) * (PW + 1)));
  std::vector<double> sum2(static_cast<size_t>((PH + 1) * (PW + 1)));

  for (Index c = 0; c < C; ++c) {
    const T* plane = image.values().data() + c * H * W;
    // integrate values shifted by an anchor so flat regions cancel exactly
    const double anchor = static_cast<double>(plane[0]);
    for (Index i = 0; i < PH; ++i) {
      const Index si = detail::reflect101(i - r, H);
      for (Index j = 0; j < PW; ++j)
        padded[static_cast<size_t>(i * PW + j)] =
            static_cast<double>(plane[si * W + detail::reflect101(j - r, W)]) - anchor;
    }
    for (Index i = 0; i < PH; ++i) {
      const double* row = padded.data() + i * PW;
      double acc1 = 0, acc2 = 0;
      double* s1 = sum1.data() + (i + 1) * (PW + 1);
      double* s2 = sum2.data() + (i + 1) * (PW + 1);
      const double* p1 = sum1.data() + i * (PW + 1);
      const double* p2 = sum2.data() + i * (PW + 1);
      s1[0] = s2[0] = 0;
      for (Index j = 0; j < PW; ++j) {
        acc1 += row[j];
        acc2 += row[j] * row[j];
        s1[j + 1] = p1[j + 1] + acc1;
        s2[j + 1] = p2[j + 1] + acc2;
      }
    }
    T* mean = out.mean.values().data() + c * H * W;
    T* stdev = out.stdev.values().data() + c * H * W;
    auto rect = [&](const std::vector<double>& s, Index i0, Index j0, Index i1, Index j1) {
      return s[static_cast<size_t>(i1 * (PW + 1) + j1)] - s[static_cast<size_t>(i0 * (PW + 1) + j1)] -
             s[static_cast<size_t>(i1 * (PW + 1) + j0)] + s[static_cast<size_t>(i0 * (PW + 1) + j0)];
    };
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < W; ++j) {
        const double m = rect(sum1, i, j, i + window, j + window) / area;
        const double q = rect(sum2, i, j, i + window, j + window) / area;
        mean[i * W + j] = static_cast<T>(anchor + m);
        stdev[i * W + j] = static_cast<T>(std::sqrt(std::max(0.0, q - m * m)));
      }
    }
  }
  return out;
}

/// L(i,j,c) = max(I_c(i,j) - mu(i,j,c), 0) / (sigma(i,j,c) + epsilon).
template <typename T>
Tensor<T> compute_rlcn(const Tensor<T>& image, const RlcnParams& params = {}) {
  params.validate();
  const LocalStats<T> stats = local_mean_std(image, params.window);
  Tensor<T> out = Tensor<T>::zeros(image.shape());
  auto iv = image.values();
  auto mv = stats.mean.values();
  auto sv = stats.stdev.values();
  auto ov = out.values();
  const T eps = static_cast<T>(params.epsilon);
  for (size_t i = 0; i < ov.size(); ++i) {
    const T num = std::max(iv[i] - mv[i], T(0));
    ov[i] = num / (sv[i] + eps);
  }
  return out;
}

/// RLCN of every image in an NCHW batch.
template <typename T>
Tensor<T> compute_rlcn_batch(const Tensor<T>& batch, const RlcnParams& params = {}) {
  const Shape& s = batch.shape();
  if (s.rank() != 4) throw std::invalid_argument("compute_rlcn_batch: expected NCHW, got " + s.str());
  Tensor<T> out = Tensor<T>::zeros(s);
  const size_t block = static_cast<size_t>(s.c() * s.h() * s.w());
  for (Index n = 0; n < s.n(); ++n) {
    Tensor<T> img = Tensor<T>::zeros(Shape{s.c(), s.h(), s.w()});
    std::copy_n(batch.values().data() + n * block, block, img.values().data());
    Tensor<T> l = compute_rlcn(img, params);
    std::copy_n(l.values().data(), block, out.values().data() + n * block);
  }
  return out;
}

/// Min-max rescale to [0,1], the documented visualization convention for RLCN
/// dumps; raw float values stay canonical. Constant inputs map to zero.
template <typename T>
Tensor<T> rescale_min_max(const Tensor<T>& t) {
  T lo = t.values()[0], hi = t.values()[0];
  for (T v : t.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor<T> out = Tensor<T>::zeros(t.shape());
  if (hi > lo) {
    const T inv = T(1) / (hi - lo);
    for (size_t i = 0; i < out.values().size(); ++i) out.values()[i] = (t.values()[i] - lo) * inv;
  }
  return out;
}

}  // namespace ecnet
