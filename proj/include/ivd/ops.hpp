#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivd/tensor.hpp"

namespace ivd {

// 2-D convolution geometry. Weights are laid out (out_channels,
// in_channels/groups, kernel_h, kernel_w); groups partition channels
// block-diagonally.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool depthwise = false;

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 ||
        padding < 0 || groups < 1) {
      throw std::invalid_argument("conv spec has a non-positive field");
    }
    if (in_channels % groups != 0) {
      throw std::invalid_argument("conv in_channels " + std::to_string(in_channels) +
                                  " not divisible by groups " + std::to_string(groups));
    }
    if (out_channels % groups != 0) {
      throw std::invalid_argument("conv out_channels " + std::to_string(out_channels) +
                                  " not divisible by groups " + std::to_string(groups));
    }
    if (depthwise && groups != in_channels) {
      throw std::invalid_argument("depthwise conv requires groups == in_channels, got groups " +
                                  std::to_string(groups) + " for " + std::to_string(in_channels) +
                                  " channels");
    }
  }

  int out_h(int in_h) const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * padding - kernel_w) / stride + 1; }

  std::vector<int> weight_shape() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
  }

  // Multiply-add count per batch item for one output grid.
  long long macs(int oh, int ow) const {
    return static_cast<long long>(out_channels) * (in_channels / groups) * kernel_h * kernel_w *
           oh * ow;
  }
};

enum class Act { Sigmoid, Relu6, Tanh };

enum class PoolKind { MaxGlobal, AvgGlobal, MaxWindow };

struct PoolSpec {
  PoolKind kind = PoolKind::MaxGlobal;
  int window = 2;  // MaxWindow only
  int stride = 2;
};

// Uniform 8-bit fake-quantization parameters. Ranges are nudged so that zero
// lands exactly on an integer level.
struct QuantParams {
  double min = 0.0;
  double max = 0.0;
  static constexpr int kLevels = 256;

  void validate() const {
    if (!(min < max)) {
      throw std::invalid_argument("quant range requires min < max, got [" + std::to_string(min) +
                                  ", " + std::to_string(max) + "]");
    }
  }

  double scale() const { return (max - min) / (kLevels - 1); }

  // Integer level that represents zero after nudging.
  int zero_point() const {
    double zp = -min / scale();
    double nudged = std::nearbyint(zp);
    if (nudged < 0) nudged = 0;
    if (nudged > kLevels - 1) nudged = kLevels - 1;
    return static_cast<int>(nudged);
  }

  static QuantParams symmetric_from(double lo, double hi) {
    double a = std::max(std::abs(lo), std::abs(hi));
    if (a == 0.0) a = 1e-6;
    return QuantParams{-a, a};
  }

  // Widen to include zero (required so the nudged grid can represent it).
  static QuantParams covering(double lo, double hi) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    if (lo == hi) hi = lo + 1e-6;
    return QuantParams{lo, hi};
  }
};

namespace detail {

inline void check_rank4(const std::vector<int>& s, const char* what) {
  if (s.size() != 4) {
    throw std::invalid_argument(std::string(what) + " expects a rank-4 (N,C,H,W) tensor");
  }
}

// First/last output index whose sampled input index stays in [0, in).
inline int conv_first(int k, int pad, int stride) {
  const int off = k - pad;
  return off >= 0 ? 0 : (-off + stride - 1) / stride;
}

inline int conv_last(int k, int pad, int stride, int in, int out) {
  const int lim = in - 1 - (k - pad);
  return lim < 0 ? -1 : std::min(out - 1, lim / stride);
}

}  // namespace detail

namespace detail {

// Gathers one group's receptive fields into a (icpg*kh*kw, oh*ow) patch
// matrix so the convolution itself becomes a small matrix product.
template <class T>
void im2col(const TensorT<T>& x, const ConvSpec& spec, int n, int group, int oh, int ow,
            std::vector<T>& patches) {
  const int icpg = spec.in_channels / spec.groups;
  const int in_h = x.dim(2), in_w = x.dim(3);
  const int stride = spec.stride, pad = spec.padding;
  const long long cols = static_cast<long long>(oh) * ow;
  patches.assign(static_cast<std::size_t>(icpg * spec.kernel_h * spec.kernel_w * cols), T(0));
  for (int icg = 0; icg < icpg; ++icg) {
    const T* xplane = &x.at(n, group * icpg + icg, 0, 0);
    for (int kh = 0; kh < spec.kernel_h; ++kh) {
      const int y_lo = conv_first(kh, pad, stride);
      const int y_hi = conv_last(kh, pad, stride, in_h, oh);
      for (int kw = 0; kw < spec.kernel_w; ++kw) {
        const int x_lo = conv_first(kw, pad, stride);
        const int x_hi = conv_last(kw, pad, stride, in_w, ow);
        const int off = kw - pad;
        T* prow =
            patches.data() + (static_cast<long long>(icg) * spec.kernel_h * spec.kernel_w +
                              kh * spec.kernel_w + kw) *
                                 cols;
        for (int y = y_lo; y <= y_hi; ++y) {
          const T* xrow = xplane + static_cast<long long>(y * stride + kh - pad) * in_w;
          T* dst = prow + static_cast<long long>(y) * ow;
          if (stride == 1) {
            for (int xo = x_lo; xo <= x_hi; ++xo) dst[xo] = xrow[xo + off];
          } else {
            for (int xo = x_lo; xo <= x_hi; ++xo) dst[xo] = xrow[xo * stride + off];
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back onto the input gradient.
template <class T>
void col2im_add(const std::vector<T>& patches, const ConvSpec& spec, int n, int group, int oh,
                int ow, TensorT<T>& gx) {
  const int icpg = spec.in_channels / spec.groups;
  const int in_h = gx.dim(2), in_w = gx.dim(3);
  const int stride = spec.stride, pad = spec.padding;
  const long long cols = static_cast<long long>(oh) * ow;
  for (int icg = 0; icg < icpg; ++icg) {
    T* gplane = &gx.at(n, group * icpg + icg, 0, 0);
    for (int kh = 0; kh < spec.kernel_h; ++kh) {
      const int y_lo = conv_first(kh, pad, stride);
      const int y_hi = conv_last(kh, pad, stride, in_h, oh);
      for (int kw = 0; kw < spec.kernel_w; ++kw) {
        const int x_lo = conv_first(kw, pad, stride);
        const int x_hi = conv_last(kw, pad, stride, in_w, ow);
        const int off = kw - pad;
        const T* prow =
            patches.data() + (static_cast<long long>(icg) * spec.kernel_h * spec.kernel_w +
                              kh * spec.kernel_w + kw) *
                                 cols;
        for (int y = y_lo; y <= y_hi; ++y) {
          T* grow = gplane + static_cast<long long>(y * stride + kh - pad) * in_w;
          const T* src = prow + static_cast<long long>(y) * ow;
          if (stride == 1) {
            for (int xo = x_lo; xo <= x_hi; ++xo) grow[xo + off] += src[xo];
          } else {
            for (int xo = x_lo; xo <= x_hi; ++xo) grow[xo * stride + off] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                          const ConvSpec& spec) {
  spec.validate();
  detail::check_rank4(x.shape(), "conv2d input");
  if (x.dim(1) != spec.in_channels) {
    throw std::invalid_argument("conv2d input channel dim is " + std::to_string(x.dim(1)) +
                                ", spec expects " + std::to_string(spec.in_channels));
  }
  if (w.shape() != spec.weight_shape()) {
    throw std::invalid_argument("conv2d weight shape " + w.shape_str() +
                                " does not match spec (out,in/groups,kh,kw)");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != spec.out_channels)) {
    throw std::invalid_argument("conv2d bias length must equal out_channels " +
                                std::to_string(spec.out_channels));
  }
  const int n_batch = x.dim(0), in_h = x.dim(2), in_w = x.dim(3);
  const int oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("conv2d output spatial dims collapse below 1 for input " +
                                x.shape_str());
  }
  const int icpg = spec.in_channels / spec.groups;
  const int ocpg = spec.out_channels / spec.groups;
  TensorT<T> out({n_batch, spec.out_channels, oh, ow});

  const long long cols = static_cast<long long>(oh) * ow;
  const long long kdim = static_cast<long long>(icpg) * spec.kernel_h * spec.kernel_w;
  std::vector<T> patches;
  for (int n = 0; n < n_batch; ++n) {
    for (int g = 0; g < spec.groups; ++g) {
      detail::im2col(x, spec, n, g, oh, ow, patches);
      for (int ocg = 0; ocg < ocpg; ++ocg) {
        const int oc = g * ocpg + ocg;
        T* orow = &out.at(n, oc, 0, 0);
        const T b = bias ? (*bias)[oc] : T(0);
        for (long long j = 0; j < cols; ++j) orow[j] = b;
        const T* wrow = w.data() + oc * kdim;
        for (long long k = 0; k < kdim; ++k) {
          const T wv = wrow[k];
          const T* prow = patches.data() + k * cols;
          for (long long j = 0; j < cols; ++j) orow[j] += wv * prow[j];
        }
      }
    }
  }
  return out;
}

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& spec) {
  return conv2d_forward(x, w, static_cast<const TensorT<T>*>(nullptr), spec);
}

template <class T>
struct ConvGrads {
  TensorT<T> gx;
  TensorT<T> gw;
  TensorT<T> gbias;
};

template <class T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& spec,
                             const TensorT<T>& gout) {
  const int n_batch = x.dim(0), in_h = x.dim(2), in_w = x.dim(3);
  const int oh = gout.dim(2), ow = gout.dim(3);
  const int icpg = spec.in_channels / spec.groups;
  const int ocpg = spec.out_channels / spec.groups;

  ConvGrads<T> g{TensorT<T>(x.shape()), TensorT<T>(w.shape()),
                 TensorT<T>({spec.out_channels})};

  const long long cols = static_cast<long long>(oh) * ow;
  const long long kdim = static_cast<long long>(icpg) * spec.kernel_h * spec.kernel_w;
  (void)in_h;
  (void)in_w;
  std::vector<T> patches, gpatches;
  for (int n = 0; n < n_batch; ++n) {
    for (int gidx = 0; gidx < spec.groups; ++gidx) {
      detail::im2col(x, spec, n, gidx, oh, ow, patches);
      gpatches.assign(patches.size(), T(0));
      for (int ocg = 0; ocg < ocpg; ++ocg) {
        const int oc = gidx * ocpg + ocg;
        const T* grow = &gout.at(n, oc, 0, 0);
        T acc = 0;
        for (long long j = 0; j < cols; ++j) acc += grow[j];
        g.gbias[oc] += acc;
        const T* wrow = w.data() + oc * kdim;
        T* gwrow = g.gw.data() + oc * kdim;
        for (long long k = 0; k < kdim; ++k) {
          const T* prow = patches.data() + k * cols;
          T* gprow = gpatches.data() + k * cols;
          const T wv = wrow[k];
          T dot = 0;
          for (long long j = 0; j < cols; ++j) {
            dot += prow[j] * grow[j];
            gprow[j] += wv * grow[j];
          }
          gwrow[k] += dot;
        }
      }
      detail::col2im_add(gpatches, spec, n, gidx, oh, ow, g.gx);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> activation_forward(const TensorT<T>& x, Act kind) {
  TensorT<T> out(x.shape());
  const long long n = x.numel();
  switch (kind) {
    case Act::Sigmoid:
      for (long long i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
    case Act::Relu6:
      for (long long i = 0; i < n; ++i) out[i] = std::min(std::max(x[i], T(0)), T(6));
      break;
    case Act::Tanh:
      for (long long i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
      break;
  }
  return out;
}

template <class T>
TensorT<T> activation_backward(const TensorT<T>& x, const TensorT<T>& y, Act kind,
                               const TensorT<T>& gout) {
  TensorT<T> gx(x.shape());
  const long long n = x.numel();
  switch (kind) {
    case Act::Sigmoid:
      for (long long i = 0; i < n; ++i) gx[i] = gout[i] * y[i] * (T(1) - y[i]);
      break;
    case Act::Relu6:
      for (long long i = 0; i < n; ++i) gx[i] = (x[i] > T(0) && x[i] < T(6)) ? gout[i] : T(0);
      break;
    case Act::Tanh:
      for (long long i = 0; i < n; ++i) gx[i] = gout[i] * (T(1) - y[i] * y[i]);
      break;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// concat / slice over the channel axis
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels_forward(const std::vector<const TensorT<T>*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
  detail::check_rank4(xs[0]->shape(), "concat input");
  int channels = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    detail::check_rank4(xs[i]->shape(), "concat input");
    for (int d : {0, 2, 3}) {
      if (xs[i]->dim(d) != xs[0]->dim(d)) {
        throw std::invalid_argument("concat input " + std::to_string(i) + " dim " +
                                    std::to_string(d) + " is " + std::to_string(xs[i]->dim(d)) +
                                    ", expected " + std::to_string(xs[0]->dim(d)));
      }
    }
    channels += xs[i]->dim(1);
  }
  const int n_batch = xs[0]->dim(0), h = xs[0]->dim(2), w = xs[0]->dim(3);
  TensorT<T> out({n_batch, channels, h, w});
  const long long plane = static_cast<long long>(h) * w;
  for (int n = 0; n < n_batch; ++n) {
    int c0 = 0;
    for (const auto* xp : xs) {
      const long long block = static_cast<long long>(xp->dim(1)) * plane;
      std::copy(xp->data() + n * block, xp->data() + (n + 1) * block,
                out.data() + (static_cast<long long>(n) * channels + c0) * plane);
      c0 += xp->dim(1);
    }
  }
  return out;
}

template <class T>
TensorT<T> slice_channels_forward(const TensorT<T>& x, int c0, int count) {
  detail::check_rank4(x.shape(), "slice input");
  if (c0 < 0 || count < 1 || c0 + count > x.dim(1)) {
    throw std::invalid_argument("channel slice [" + std::to_string(c0) + ", " +
                                std::to_string(c0 + count) + ") out of range for " +
                                std::to_string(x.dim(1)) + " channels");
  }
  const int n_batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  TensorT<T> out({n_batch, count, h, w});
  const long long plane = static_cast<long long>(h) * w;
  for (int n = 0; n < n_batch; ++n) {
    std::copy(x.data() + (static_cast<long long>(n) * x.dim(1) + c0) * plane,
              x.data() + (static_cast<long long>(n) * x.dim(1) + c0 + count) * plane,
              out.data() + static_cast<long long>(n) * count * plane);
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> pool_forward(const TensorT<T>& x, const PoolSpec& spec,
                        std::vector<long long>* argmax) {
  detail::check_rank4(x.shape(), "pool input");
  const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  if (spec.kind == PoolKind::MaxGlobal || spec.kind == PoolKind::AvgGlobal) {
    TensorT<T> out({n_batch, c, 1, 1});
    if (argmax) argmax->assign(static_cast<std::size_t>(n_batch) * c, 0);
    for (int n = 0; n < n_batch; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        const T* p = &x.at(n, ch, 0, 0);
        if (spec.kind == PoolKind::MaxGlobal) {
          long long best = 0;
          for (long long i = 1; i < plane; ++i) {
            if (p[i] > p[best]) best = i;
          }
          out.at(n, ch, 0, 0) = p[best];
          if (argmax) (*argmax)[static_cast<std::size_t>(n) * c + ch] = best;
        } else {
          T s = 0;
          for (long long i = 0; i < plane; ++i) s += p[i];
          out.at(n, ch, 0, 0) = s / static_cast<T>(plane);
        }
      }
    }
    return out;
  }
  // MaxWindow
  const int k = spec.window, s = spec.stride;
  const int oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("pool window exceeds input " + x.shape_str());
  TensorT<T> out({n_batch, c, oh, ow});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.numel()), 0);
  long long oidx = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      const T* p = &x.at(n, ch, 0, 0);
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++oidx) {
          long long best = static_cast<long long>(y * s) * w + xo * s;
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const long long i = static_cast<long long>(y * s + dy) * w + xo * s + dx;
              if (p[i] > p[best]) best = i;
            }
          }
          out[oidx] = p[best];
          if (argmax) (*argmax)[static_cast<std::size_t>(oidx)] = best;
        }
      }
    }
  }
  return out;
}

template <class T>
TensorT<T> pool_backward(const TensorT<T>& x, const PoolSpec& spec,
                         const std::vector<long long>& argmax, const TensorT<T>& gout) {
  const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  TensorT<T> gx(x.shape());
  if (spec.kind == PoolKind::AvgGlobal) {
    for (int n = 0; n < n_batch; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        const T gv = gout.at(n, ch, 0, 0) / static_cast<T>(plane);
        T* p = &gx.at(n, ch, 0, 0);
        for (long long i = 0; i < plane; ++i) p[i] += gv;
      }
    }
    return gx;
  }
  if (spec.kind == PoolKind::MaxGlobal) {
    for (int n = 0; n < n_batch; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        T* p = &gx.at(n, ch, 0, 0);
        p[argmax[static_cast<std::size_t>(n) * c + ch]] += gout.at(n, ch, 0, 0);
      }
    }
    return gx;
  }
  for (long long oidx = 0; oidx < gout.numel(); ++oidx) {
    const long long nc = oidx / (static_cast<long long>(gout.dim(2)) * gout.dim(3));
    gx[nc * plane + argmax[static_cast<std::size_t>(oidx)]] += gout[oidx];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// fully connected
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> fully_connected_forward(const TensorT<T>& x, const TensorT<T>& w,
                                   const TensorT<T>* bias) {
  const int n_batch = x.dim(0);
  const long long in_dim = x.numel() / n_batch;
  if (w.rank() != 2) throw std::invalid_argument("fc weight must be rank-2 (out,in)");
  if (w.dim(1) != in_dim) {
    throw std::invalid_argument("fc input length " + std::to_string(in_dim) +
                                " does not match weight input dim " + std::to_string(w.dim(1)));
  }
  const int out_dim = w.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_dim)) {
    throw std::invalid_argument("fc bias length must equal out dim " + std::to_string(out_dim));
  }
  TensorT<T> out({n_batch, out_dim});
  for (int n = 0; n < n_batch; ++n) {
    const T* xv = x.data() + n * in_dim;
    for (int o = 0; o < out_dim; ++o) {
      const T* wv = w.data() + static_cast<long long>(o) * in_dim;
      T acc = bias ? (*bias)[o] : T(0);
      for (long long i = 0; i < in_dim; ++i) acc += wv[i] * xv[i];
      out.at2(n, o) = acc;
    }
  }
  return out;
}

template <class T>
TensorT<T> fully_connected_forward(const TensorT<T>& x, const TensorT<T>& w) {
  return fully_connected_forward(x, w, static_cast<const TensorT<T>*>(nullptr));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

enum class EwKind { Add, Sub, Mul };

template <class T>
TensorT<T> elementwise_forward(const TensorT<T>& a, const TensorT<T>& b, EwKind kind) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("elementwise op shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  TensorT<T> out(a.shape());
  const long long n = a.numel();
  switch (kind) {
    case EwKind::Add:
      for (long long i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case EwKind::Sub:
      for (long long i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case EwKind::Mul:
      for (long long i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// fake quantization: clamp -> quantize to 256 levels -> dequantize.
// Output values land exactly on the nudged lattice, so the op is idempotent
// bit-for-bit.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> fake_quant_forward(const TensorT<T>& x, const QuantParams& p) {
  p.validate();
  const T scale = static_cast<T>(p.scale());
  const int zp = p.zero_point();
  const T nmin = scale * static_cast<T>(0 - zp);
  const T nmax = scale * static_cast<T>(QuantParams::kLevels - 1 - zp);
  TensorT<T> out(x.shape());
  for (long long i = 0; i < x.numel(); ++i) {
    T v = std::min(std::max(x[i], nmin), nmax);
    T q = std::nearbyint(v / scale) + static_cast<T>(zp);
    if (q < T(0)) q = T(0);
    if (q > T(QuantParams::kLevels - 1)) q = T(QuantParams::kLevels - 1);
    out[i] = scale * (q - static_cast<T>(zp));
  }
  return out;
}

// Straight-through estimator: gradient passes inside the clamp range.
template <class T>
TensorT<T> fake_quant_backward(const TensorT<T>& x, const QuantParams& p, const TensorT<T>& gout) {
  const T scale = static_cast<T>(p.scale());
  const int zp = p.zero_point();
  const T nmin = scale * static_cast<T>(0 - zp);
  const T nmax = scale * static_cast<T>(QuantParams::kLevels - 1 - zp);
  TensorT<T> gx(x.shape());
  for (long long i = 0; i < x.numel(); ++i) {
    gx[i] = (x[i] >= nmin && x[i] <= nmax) ? gout[i] : T(0);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// frame preprocessing (outside the recorded graph; frames are leaves)
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> downsample_half(const TensorT<T>& x) {
  detail::check_rank4(x.shape(), "downsample input");
  const int n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("downsample_half requires even spatial dims, got " +
                                x.shape_str());
  }
  TensorT<T> out({n_batch, c, h / 2, w / 2});
  for (int n = 0; n < n_batch; ++n) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h / 2; ++y) {
        for (int xo = 0; xo < w / 2; ++xo) {
          out.at(n, ch, y, xo) =
              (x.at(n, ch, 2 * y, 2 * xo) + x.at(n, ch, 2 * y, 2 * xo + 1) +
               x.at(n, ch, 2 * y + 1, 2 * xo) + x.at(n, ch, 2 * y + 1, 2 * xo + 1)) /
              T(4);
        }
      }
    }
  }
  return out;
}

}  // namespace ivd
