#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecnet/random.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

enum class Pad { same, valid };

namespace detail {

template <typename T>
inline void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
}

/// Fresh output tensor, attached to the tape when any input tracks gradients.
/// A consumed tape must be re-recorded before further graph building.
template <typename T>
inline Tensor<T> make_output(Tape<T>& g, Shape shape, bool inputs_need_grad) {
  if (inputs_need_grad && g.consumed())
    throw std::runtime_error("Tape: op recorded after backward; build a fresh tape");
  Tensor<T> y = Tensor<T>::zeros(std::move(shape));
  if (g.recording() && inputs_need_grad) y.set_requires_grad(true);
  return y;
}

template <typename T>
inline void axpy(std::span<T> dst, std::span<const T> src) {
  flat(dst) += flat(src);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMatMap = Eigen::Map<const RowMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Leaf constructors
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> zeros(Shape s) {
  return Tensor<T>::zeros(std::move(s));
}
template <typename T>
Tensor<T> ones(Shape s) {
  return Tensor<T>::ones(std::move(s));
}
template <typename T>
Tensor<T> full(Shape s, T v) {
  return Tensor<T>::full(std::move(s), v);
}

/// He-normal initialization: values ~ N(0, 2/fan_in).
template <typename T>
Tensor<T> randn_init(Shape s, Index fan_in, Rng& rng) {
  if (fan_in <= 0) throw std::invalid_argument("randn_init: fan_in must be positive");
  Tensor<T> t = Tensor<T>::zeros(std::move(s));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : t.values()) v = static_cast<T>(std_dev * rng.normal());
  return t;
}

template <typename T>
Tensor<T> randn_init(Shape s, Index fan_in, uint64_t seed) {
  Rng rng(seed);
  return randn_init<T>(std::move(s), fan_in, rng);
}

// ---------------------------------------------------------------------------
// Elementwise ops (no broadcasting; shapes must match exactly)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> y = detail::make_output(g, a.shape(), a.requires_grad() || b.requires_grad());
  flat_values(y) = flat_values(a) + flat_values(b);
  if (y.requires_grad()) {
    g.record([ga = a.grad_ptr(), gb = b.grad_ptr(), gy = y.grad_ptr(), na = a.requires_grad(),
              nb = b.requires_grad()] {
      if (na) detail::axpy<T>({ga->data(), ga->size()}, {gy->data(), gy->size()});
      if (nb) detail::axpy<T>({gb->data(), gb->size()}, {gy->data(), gy->size()});
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> y = detail::make_output(g, a.shape(), a.requires_grad() || b.requires_grad());
  flat_values(y) = flat_values(a) - flat_values(b);
  if (y.requires_grad()) {
    g.record([ga = a.grad_ptr(), gb = b.grad_ptr(), gy = y.grad_ptr(), na = a.requires_grad(),
              nb = b.requires_grad()] {
      ConstArrayXMap<T> dy(gy->data(), static_cast<Index>(gy->size()));
      if (na) ArrayXMap<T>(ga->data(), static_cast<Index>(ga->size())) += dy;
      if (nb) ArrayXMap<T>(gb->data(), static_cast<Index>(gb->size())) -= dy;
    });
  }
  return y;
}

template <typename T>
Tensor<T> hadamard(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tensor<T> y = detail::make_output(g, a.shape(), a.requires_grad() || b.requires_grad());
  flat_values(y) = flat_values(a) * flat_values(b);
  if (y.requires_grad()) {
    g.record([va = a.value_ptr(), vb = b.value_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr(),
              gy = y.grad_ptr(), na = a.requires_grad(), nb = b.requires_grad()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> dy(gy->data(), n);
      if (na)
        ArrayXMap<T>(ga->data(), n) += dy * ConstArrayXMap<T>(vb->data(), n);
      if (nb)
        ArrayXMap<T>(gb->data(), n) += dy * ConstArrayXMap<T>(va->data(), n);
    });
  }
  return y;
}

template <typename T>
Tensor<T> div(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  Tensor<T> y = detail::make_output(g, a.shape(), a.requires_grad() || b.requires_grad());
  flat_values(y) = flat_values(a) / flat_values(b);
  if (y.requires_grad()) {
    g.record([va = a.value_ptr(), vb = b.value_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr(),
              gy = y.grad_ptr(), na = a.requires_grad(), nb = b.requires_grad()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> dy(gy->data(), n);
      ConstArrayXMap<T> bv(vb->data(), n);
      if (na) ArrayXMap<T>(ga->data(), n) += dy / bv;
      if (nb)
        ArrayXMap<T>(gb->data(), n) -= dy * ConstArrayXMap<T>(va->data(), n) / (bv * bv);
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& g, const Tensor<T>& x, T s) {
  detail::require_defined(x, "scale");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  flat_values(y) = flat_values(x) * s;
  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr(), s] {
      const Index n = static_cast<Index>(gy->size());
      ArrayXMap<T>(gx->data(), n) += ConstArrayXMap<T>(gy->data(), n) * s;
    });
  }
  return y;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>& g, const Tensor<T>& x, T c) {
  detail::require_defined(x, "add_scalar");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  flat_values(y) = flat_values(x) + c;
  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr()] {
      detail::axpy<T>({gx->data(), gx->size()}, {gy->data(), gy->size()});
    });
  }
  return y;
}

template <typename T>
Tensor<T> neg(Tape<T>& g, const Tensor<T>& x) {
  return scale(g, x, T(-1));
}

template <typename T>
Tensor<T> abs_val(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "abs_val");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  flat_values(y) = flat_values(x).abs();
  if (y.requires_grad()) {
    // subgradient 0 at x = 0
    g.record([vx = x.value_ptr(), gx = x.grad_ptr(), gy = y.grad_ptr()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> xv(vx->data(), n);
      ArrayXMap<T>(gx->data(), n) +=
          ConstArrayXMap<T>(gy->data(), n) * xv.sign();
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "relu");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  flat_values(y) = flat_values(x).max(T(0));
  if (y.requires_grad()) {
    // subgradient 0 at x = 0: mask on strict positivity of the input
    g.record([vx = x.value_ptr(), gx = x.grad_ptr(), gy = y.grad_ptr()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> xv(vx->data(), n);
      ArrayXMap<T>(gx->data(), n) +=
          ConstArrayXMap<T>(gy->data(), n) * (xv > T(0)).template cast<T>();
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "sigmoid");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  {
    auto xs = x.values();
    auto ys = y.values();
    for (size_t i = 0; i < xs.size(); ++i) {
      const T v = xs[i];
      ys[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                        : std::exp(v) / (T(1) + std::exp(v));
    }
  }
  if (y.requires_grad()) {
    g.record([vy = y.value_ptr(), gx = x.grad_ptr(), gy = y.grad_ptr()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> yv(vy->data(), n);
      ArrayXMap<T>(gx->data(), n) += ConstArrayXMap<T>(gy->data(), n) * yv * (T(1) - yv);
    });
  }
  return y;
}

template <typename T>
Tensor<T> tanh_op(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "tanh");
  Tensor<T> y = detail::make_output(g, x.shape(), x.requires_grad());
  flat_values(y) = flat_values(x).tanh();
  if (y.requires_grad()) {
    g.record([vy = y.value_ptr(), gx = x.grad_ptr(), gy = y.grad_ptr()] {
      const Index n = static_cast<Index>(gy->size());
      ConstArrayXMap<T> yv(vy->data(), n);
      ArrayXMap<T>(gx->data(), n) += ConstArrayXMap<T>(gy->data(), n) * (T(1) - yv * yv);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

/// Concatenate rank-4 NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>& g, const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  if (s0.rank() != 4) throw std::invalid_argument("concat_channels: expected NCHW, got " + s0.str());
  Index total_c = 0;
  bool need_grad = false;
  for (const auto& x : xs) {
    detail::require_defined(x, "concat_channels");
    const Shape& s = x.shape();
    if (s.rank() != 4 || s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w())
      throw std::invalid_argument("concat_channels: incompatible " + s.str() + " vs " + s0.str());
    total_c += s.c();
    need_grad = need_grad || x.requires_grad();
  }
  Tensor<T> y = detail::make_output(g, Shape{s0.n(), total_c, s0.h(), s0.w()}, need_grad);

  const size_t plane = static_cast<size_t>(s0.h() * s0.w());
  auto yv = y.values();
  for (Index n = 0; n < s0.n(); ++n) {
    size_t dst = static_cast<size_t>(n) * static_cast<size_t>(total_c) * plane;
    for (const auto& x : xs) {
      const size_t block = static_cast<size_t>(x.shape().c()) * plane;
      auto xv = x.values();
      std::copy_n(xv.data() + static_cast<size_t>(n) * block, block, yv.data() + dst);
      dst += block;
    }
  }

  if (y.requires_grad()) {
    struct Piece {
      std::shared_ptr<std::vector<T>> grad;
      Index channels;
      bool needs;
    };
    std::vector<Piece> pieces;
    pieces.reserve(xs.size());
    for (const auto& x : xs) pieces.push_back({x.grad_ptr(), x.shape().c(), x.requires_grad()});
    g.record([pieces = std::move(pieces), gy = y.grad_ptr(), N = s0.n(), total_c, plane] {
      for (Index n = 0; n < N; ++n) {
        size_t src = static_cast<size_t>(n) * static_cast<size_t>(total_c) * plane;
        for (const auto& p : pieces) {
          const size_t block = static_cast<size_t>(p.channels) * plane;
          if (p.needs) {
            T* dst = p.grad->data() + static_cast<size_t>(n) * block;
            const T* s = gy->data() + src;
            for (size_t i = 0; i < block; ++i) dst[i] += s[i];
          }
          src += block;
        }
      }
    });
  }
  return y;
}

namespace detail {

struct ConvDims {
  Index N, C, H, W, OC, K, stride, pad, OH, OW;
};

inline ConvDims conv_dims(const Shape& x, const Shape& w, Index stride, Pad pad_mode) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be NCHW, got " + x.str());
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [OC,C,K,K], got " + w.str());
  ConvDims d;
  d.N = x.n();
  d.C = x.c();
  d.H = x.h();
  d.W = x.w();
  d.OC = w[0];
  d.K = w[2];
  if (w[2] != w[3]) throw std::invalid_argument("conv2d: non-square kernel " + w.str());
  if (d.K % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(d.K));
  if (w[1] != d.C)
    throw std::invalid_argument("conv2d: channel mismatch, input " + x.str() + " weight " + w.str());
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  d.stride = stride;
  d.pad = pad_mode == Pad::same ? d.K / 2 : 0;
  if (pad_mode == Pad::valid && (d.H < d.K || d.W < d.K))
    throw std::invalid_argument("conv2d: input " + x.str() + " smaller than valid-mode kernel");
  d.OH = (d.H + 2 * d.pad - d.K) / stride + 1;
  d.OW = (d.W + 2 * d.pad - d.K) / stride + 1;
  return d;
}

// col layout: [C*K*K, OH*OW] row-major.
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
  const Index ohow = d.OH * d.OW;
  for (Index c = 0; c < d.C; ++c) {
    const T* plane = img + c * d.H * d.W;
    for (Index ky = 0; ky < d.K; ++ky) {
      for (Index kx = 0; kx < d.K; ++kx) {
        T* row = col + ((c * d.K + ky) * d.K + kx) * ohow;
        for (Index oy = 0; oy < d.OH; ++oy) {
          const Index iy = oy * d.stride - d.pad + ky;
          T* out = row + oy * d.OW;
          if (iy < 0 || iy >= d.H) {
            std::fill_n(out, d.OW, T(0));
            continue;
          }
          const T* src = plane + iy * d.W;
          for (Index ox = 0; ox < d.OW; ++ox) {
            const Index ix = ox * d.stride - d.pad + kx;
            out[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
  const Index ohow = d.OH * d.OW;
  for (Index c = 0; c < d.C; ++c) {
    T* plane = img + c * d.H * d.W;
    for (Index ky = 0; ky < d.K; ++ky) {
      for (Index kx = 0; kx < d.K; ++kx) {
        const T* row = col + ((c * d.K + ky) * d.K + kx) * ohow;
        for (Index oy = 0; oy < d.OH; ++oy) {
          const Index iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          T* dst = plane + iy * d.W;
          const T* src = row + oy * d.OW;
          for (Index ox = 0; ox < d.OW; ++ox) {
            const Index ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D cross-correlation, zero padding. "same" keeps the spatial size at stride 1
/// and gives ceil(size/2) at stride 2; "valid" applies no padding.
template <typename T>
Tensor<T> conv2d(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 Index stride = 1, Pad pad_mode = Pad::same) {
  detail::require_defined(x, "conv2d");
  detail::require_defined(w, "conv2d");
  detail::require_defined(b, "conv2d");
  const detail::ConvDims d = detail::conv_dims(x.shape(), w.shape(), stride, pad_mode);
  if (b.shape().rank() != 1 || b.shape()[0] != d.OC)
    throw std::invalid_argument("conv2d: bias shape " + b.shape().str() + " for " +
                                std::to_string(d.OC) + " output channels");

  const bool need_grad = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Tensor<T> y = detail::make_output(g, Shape{d.N, d.OC, d.OH, d.OW}, need_grad);

  const Index ckk = d.C * d.K * d.K;
  const Index ohow = d.OH * d.OW;
  std::vector<T> col(static_cast<size_t>(ckk * ohow));
  detail::ConstRowMatMap<T> wm(w.values().data(), d.OC, ckk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.values().data(), d.OC);

  for (Index n = 0; n < d.N; ++n) {
    detail::im2col(x.values().data() + n * d.C * d.H * d.W, d, col.data());
    detail::ConstRowMatMap<T> cm(col.data(), ckk, ohow);
    detail::RowMatMap<T> ym(y.values().data() + n * d.OC * ohow, d.OC, ohow);
    ym.noalias() = wm * cm;
    ym.colwise() += bv;
  }

  if (y.requires_grad()) {
    g.record([vx = x.value_ptr(), vw = w.value_ptr(), gx = x.grad_ptr(), gw = w.grad_ptr(),
              gb = b.grad_ptr(), gy = y.grad_ptr(), d, nx = x.requires_grad(),
              nw = w.requires_grad(), nb = b.requires_grad()] {
      const Index ckk = d.C * d.K * d.K;
      const Index ohow = d.OH * d.OW;
      detail::ConstRowMatMap<T> wm(vw->data(), d.OC, ckk);
      std::vector<T> col;
      std::vector<T> dcol;
      if (nw) col.resize(static_cast<size_t>(ckk * ohow));
      if (nx) dcol.resize(static_cast<size_t>(ckk * ohow));
      for (Index n = 0; n < d.N; ++n) {
        detail::ConstRowMatMap<T> dym(gy->data() + n * d.OC * ohow, d.OC, ohow);
        if (nw) {
          detail::im2col(vx->data() + n * d.C * d.H * d.W, d, col.data());
          detail::ConstRowMatMap<T> cm(col.data(), ckk, ohow);
          detail::RowMatMap<T> dwm(gw->data(), d.OC, ckk);
          dwm.noalias() += dym * cm.transpose();
        }
        if (nb) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbv(gb->data(), d.OC);
          dbv.noalias() += dym.rowwise().sum();
        }
        if (nx) {
          detail::RowMatMap<T> dcm(dcol.data(), ckk, ohow);
          dcm.noalias() = wm.transpose() * dym;
          detail::col2im_add(dcol.data(), d, gx->data() + n * d.C * d.H * d.W);
        }
      }
    });
  }
  return y;
}

/// Each pixel becomes a 2x2 block; backward sums the block gradients.
template <typename T>
Tensor<T> upsample_nearest2x(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "upsample_nearest2x");
  const Shape& s = x.shape();
  if (s.rank() != 4) throw std::invalid_argument("upsample_nearest2x: expected NCHW, got " + s.str());
  const Index NC = s.n() * s.c(), H = s.h(), W = s.w();
  Tensor<T> y = detail::make_output(g, Shape{s.n(), s.c(), 2 * H, 2 * W}, x.requires_grad());

  const T* xv = x.values().data();
  T* yv = y.values().data();
  for (Index p = 0; p < NC; ++p) {
    const T* src = xv + p * H * W;
    T* dst = yv + p * 4 * H * W;
    for (Index i = 0; i < H; ++i) {
      for (Index j = 0; j < W; ++j) {
        const T v = src[i * W + j];
        T* row0 = dst + (2 * i) * 2 * W + 2 * j;
        T* row1 = row0 + 2 * W;
        row0[0] = row0[1] = row1[0] = row1[1] = v;
      }
    }
  }

  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr(), NC, H, W] {
      for (Index p = 0; p < NC; ++p) {
        T* dst = gx->data() + p * H * W;
        const T* src = gy->data() + p * 4 * H * W;
        for (Index i = 0; i < H; ++i) {
          for (Index j = 0; j < W; ++j) {
            const T* row0 = src + (2 * i) * 2 * W + 2 * j;
            const T* row1 = row0 + 2 * W;
            dst[i * W + j] += row0[0] + row0[1] + row1[0] + row1[1];
          }
        }
      }
    });
  }
  return y;
}

/// Non-overlapping factor x factor mean pooling; spatial dims must divide evenly.
template <typename T>
Tensor<T> avg_pool2d(Tape<T>& g, const Tensor<T>& x, Index factor) {
  detail::require_defined(x, "avg_pool2d");
  const Shape& s = x.shape();
  if (s.rank() != 4) throw std::invalid_argument("avg_pool2d: expected NCHW, got " + s.str());
  if (factor <= 0) throw std::invalid_argument("avg_pool2d: non-positive factor");
  if (factor == 1) {
    // identity with pass-through gradient
    Tensor<T> y = detail::make_output(g, s, x.requires_grad());
    flat_values(y) = flat_values(x);
    if (y.requires_grad())
      g.record([gx = x.grad_ptr(), gy = y.grad_ptr()] {
        detail::axpy<T>({gx->data(), gx->size()}, {gy->data(), gy->size()});
      });
    return y;
  }
  if (s.h() % factor != 0 || s.w() % factor != 0)
    throw std::invalid_argument("avg_pool2d: " + s.str() + " not divisible by factor " +
                                std::to_string(factor));
  const Index NC = s.n() * s.c(), H = s.h(), W = s.w(), OH = H / factor, OW = W / factor;
  Tensor<T> y = detail::make_output(g, Shape{s.n(), s.c(), OH, OW}, x.requires_grad());

  const T inv = T(1) / static_cast<T>(factor * factor);
  const T* xv = x.values().data();
  T* yv = y.values().data();
  for (Index p = 0; p < NC; ++p) {
    const T* src = xv + p * H * W;
    T* dst = yv + p * OH * OW;
    for (Index oy = 0; oy < OH; ++oy) {
      for (Index ox = 0; ox < OW; ++ox) {
        double acc = 0;
        for (Index dy = 0; dy < factor; ++dy)
          for (Index dx = 0; dx < factor; ++dx)
            acc += static_cast<double>(src[(oy * factor + dy) * W + ox * factor + dx]);
        dst[oy * OW + ox] = static_cast<T>(acc) * inv;
      }
    }
  }

  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr(), NC, H, W, OH, OW, factor, inv] {
      for (Index p = 0; p < NC; ++p) {
        T* dst = gx->data() + p * H * W;
        const T* src = gy->data() + p * OH * OW;
        for (Index oy = 0; oy < OH; ++oy)
          for (Index ox = 0; ox < OW; ++ox) {
            const T v = src[oy * OW + ox] * inv;
            for (Index dy = 0; dy < factor; ++dy)
              for (Index dx = 0; dx < factor; ++dx)
                dst[(oy * factor + dy) * W + ox * factor + dx] += v;
          }
      }
    });
  }
  return y;
}

/// y[n,c,h,w] = x[n,c,h,w] * m[n,0,h,w] — a single-channel map gating every channel.
template <typename T>
Tensor<T> mul_channel_map(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& m) {
  detail::require_defined(x, "mul_channel_map");
  detail::require_defined(m, "mul_channel_map");
  const Shape& s = x.shape();
  const Shape& ms = m.shape();
  if (s.rank() != 4 || ms.rank() != 4 || ms.c() != 1 || ms.n() != s.n() || ms.h() != s.h() ||
      ms.w() != s.w())
    throw std::invalid_argument("mul_channel_map: " + s.str() + " with map " + ms.str());
  const Index N = s.n(), C = s.c(), HW = s.h() * s.w();
  Tensor<T> y = detail::make_output(g, s, x.requires_grad() || m.requires_grad());

  const T* xv = x.values().data();
  const T* mv = m.values().data();
  T* yv = y.values().data();
  for (Index n = 0; n < N; ++n) {
    ConstArrayXMap<T> mm(mv + n * HW, HW);
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * HW;
      ArrayXMap<T>(yv + off, HW) = ConstArrayXMap<T>(xv + off, HW) * mm;
    }
  }

  if (y.requires_grad()) {
    g.record([vx = x.value_ptr(), vm = m.value_ptr(), gx = x.grad_ptr(), gm = m.grad_ptr(),
              gy = y.grad_ptr(), N, C, HW, nx = x.requires_grad(), nm = m.requires_grad()] {
      for (Index n = 0; n < N; ++n) {
        ConstArrayXMap<T> mm(vm->data() + n * HW, HW);
        for (Index c = 0; c < C; ++c) {
          const Index off = (n * C + c) * HW;
          ConstArrayXMap<T> dy(gy->data() + off, HW);
          if (nx) ArrayXMap<T>(gx->data() + off, HW) += dy * mm;
          if (nm)
            ArrayXMap<T>(gm->data() + n * HW, HW) += dy * ConstArrayXMap<T>(vx->data() + off, HW);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions (scalar output of shape [1]; accumulation in double)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "reduce_sum");
  if (x.numel() == 0) throw std::invalid_argument("reduce_sum: empty tensor");
  Tensor<T> y = detail::make_output(g, Shape{1}, x.requires_grad());
  y.values()[0] = static_cast<T>(flat_values(x).template cast<double>().sum());
  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr()] {
      ArrayXMap<T>(gx->data(), static_cast<Index>(gx->size())) += (*gy)[0];
    });
  }
  return y;
}

template <typename T>
Tensor<T> reduce_mean(Tape<T>& g, const Tensor<T>& x) {
  detail::require_defined(x, "reduce_mean");
  if (x.numel() == 0) throw std::invalid_argument("reduce_mean: empty tensor");
  const Index n = x.numel();
  Tensor<T> y = detail::make_output(g, Shape{1}, x.requires_grad());
  y.values()[0] = static_cast<T>(flat_values(x).template cast<double>().sum() / static_cast<double>(n));
  if (y.requires_grad()) {
    g.record([gx = x.grad_ptr(), gy = y.grad_ptr(), inv = T(1) / static_cast<T>(n)] {
      ArrayXMap<T>(gx->data(), static_cast<Index>(gx->size())) += (*gy)[0] * inv;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Non-differentiable plumbing (data boundary; never recorded on a tape)
// ---------------------------------------------------------------------------

/// Stack CHW images into an NCHW batch.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("stack_batch: empty list");
  const Shape& s = imgs[0].shape();
  if (s.rank() != 3) throw std::invalid_argument("stack_batch: expected CHW images, got " + s.str());
  Tensor<T> out = Tensor<T>::zeros(Shape{static_cast<Index>(imgs.size()), s[0], s[1], s[2]});
  const size_t block = static_cast<size_t>(s.numel());
  for (size_t i = 0; i < imgs.size(); ++i) {
    if (!(imgs[i].shape() == s))
      throw std::invalid_argument("stack_batch: mixed shapes " + imgs[i].shape().str() + " vs " + s.str());
    std::copy_n(imgs[i].values().data(), block, out.values().data() + i * block);
  }
  return out;
}

/// Extract image n of an NCHW batch as a CHW tensor (copy).
template <typename T>
Tensor<T> unstack_batch(const Tensor<T>& batch, Index n) {
  const Shape& s = batch.shape();
  if (s.rank() != 4 || n < 0 || n >= s.n())
    throw std::invalid_argument("unstack_batch: index " + std::to_string(n) + " of " + s.str());
  Tensor<T> out = Tensor<T>::zeros(Shape{s.c(), s.h(), s.w()});
  const size_t block = static_cast<size_t>(out.numel());
  std::copy_n(batch.values().data() + static_cast<size_t>(n) * block, block, out.values().data());
  return out;
}

}  // namespace ecnet
