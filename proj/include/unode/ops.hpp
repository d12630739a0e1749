#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "unode/tensor.hpp"

// Layer primitives on raw tensors, each with its backward rule. These carry
// no autodiff state; the tape layer (taped_ops.hpp) records them.

namespace unode {

enum class PadMode { Zero, Reflect };

struct Padding {
  PadMode mode = PadMode::Zero;
  int width = 0;
  static Padding zero(int n) { return {PadMode::Zero, n}; }
  static Padding reflect(int n) { return {PadMode::Reflect, n}; }
};

namespace detail {

// Work threshold below which spawning OpenMP threads costs more than it buys.
inline constexpr double kOmpMinFlops = 4.0e6;

// Mirror index into [0, n) without repeating the edge sample.
inline std::int64_t mirror_index(std::int64_t i, std::int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

template <typename T>
Tensor<T> pad_input(const Tensor<T>& x, const Padding& pad) {
  const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  const int n = pad.width;
  Tensor<T> out(Shape{B, C, H + 2 * n, W + 2 * n});
  const std::int64_t Hp = H + 2 * n, Wp = W + 2 * n;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < Hp; ++h) {
        T* dst = out.data() + ((b * C + c) * Hp + h) * Wp;
        if (pad.mode == PadMode::Zero) {
          std::int64_t sh = h - n;
          if (sh < 0 || sh >= H) continue;  // stays zero
          std::memcpy(dst + n, x.data() + ((b * C + c) * H + sh) * W,
                      static_cast<std::size_t>(W) * sizeof(T));
        } else {
          std::int64_t sh = mirror_index(h - n, H);
          const T* src = x.data() + ((b * C + c) * H + sh) * W;
          for (std::int64_t w = 0; w < Wp; ++w)
            dst[w] = src[mirror_index(w - n, W)];
        }
      }
  return out;
}

// Accumulate a gradient over the padded image back onto the source image.
template <typename T>
void unpad_accumulate(const Tensor<T>& gpad, const Padding& pad,
                      Tensor<T>& gx) {
  const std::int64_t B = gx.extent(0), C = gx.extent(1), H = gx.extent(2),
                     W = gx.extent(3);
  const int n = pad.width;
  const std::int64_t Hp = H + 2 * n, Wp = W + 2 * n;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < Hp; ++h) {
        const T* src = gpad.data() + ((b * C + c) * Hp + h) * Wp;
        if (pad.mode == PadMode::Zero) {
          std::int64_t sh = h - n;
          if (sh < 0 || sh >= H) continue;
          T* dst = gx.data() + ((b * C + c) * H + sh) * W;
          for (std::int64_t w = 0; w < W; ++w) dst[w] += src[w + n];
        } else {
          std::int64_t sh = mirror_index(h - n, H);
          T* dst = gx.data() + ((b * C + c) * H + sh) * W;
          for (std::int64_t w = 0; w < Wp; ++w)
            dst[mirror_index(w - n, W)] += src[w];
        }
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, NCHW, odd square-ish kernels, symmetric padding.
// H' = (H + 2n - kh)/stride + 1 and the division must be exact.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>* bias, int stride, const Padding& pad) {
  UNODE_CHECK(x.rank() == 4 && kernel.rank() == 4, "conv2d expects 4-d tensors");
  const std::int64_t B = x.extent(0), Cin = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  const std::int64_t Cout = kernel.extent(0), kh = kernel.extent(2),
                     kw = kernel.extent(3);
  UNODE_CHECK(kernel.extent(1) == Cin, "conv2d: kernel Cin mismatch");
  UNODE_CHECK(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
  UNODE_CHECK(stride >= 1, "conv2d: stride must be positive");
  UNODE_CHECK(pad.width >= 0 && pad.width < H && pad.width < W,
              "conv2d: padding width must be < input extent");
  if (bias) UNODE_CHECK(bias->numel() == Cout, "conv2d: bias length mismatch");
  const std::int64_t n = pad.width;
  UNODE_CHECK(H + 2 * n >= kh && W + 2 * n >= kw, "conv2d: kernel larger than padded input");
  UNODE_CHECK((H + 2 * n - kh) % stride == 0 && (W + 2 * n - kw) % stride == 0,
              "conv2d: stride does not divide output geometry");
  const std::int64_t Ho = (H + 2 * n - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * n - kw) / stride + 1;

  Tensor<T> xp = detail::pad_input(x, pad);
  const std::int64_t Hp = H + 2 * n, Wp = W + 2 * n;
  Tensor<T> y(Shape{B, Cout, Ho, Wo});
  const double flops = 2.0 * static_cast<double>(B * Cout * Cin * kh * kw) *
                       static_cast<double>(Ho * Wo);

#pragma omp parallel for collapse(2) schedule(static) \
    if (flops > detail::kOmpMinFlops)
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Cout; ++co) {
      T* yb = y.data() + (b * Cout + co) * Ho * Wo;
      const T bv = bias ? (*bias)[co] : T(0);
      for (std::int64_t i = 0; i < Ho * Wo; ++i) yb[i] = bv;
      for (std::int64_t ci = 0; ci < Cin; ++ci) {
        const T* xc = xp.data() + (b * Cin + ci) * Hp * Wp;
        for (std::int64_t r = 0; r < kh; ++r)
          for (std::int64_t s = 0; s < kw; ++s) {
            const T wv = kernel[((co * Cin + ci) * kh + r) * kw + s];
            if (stride == 1) {
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                const T* xr = xc + (oh + r) * Wp + s;
                T* yr = yb + oh * Wo;
                for (std::int64_t ow = 0; ow < Wo; ++ow) yr[ow] += wv * xr[ow];
              }
            } else {
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                const T* xr = xc + (oh * stride + r) * Wp + s;
                T* yr = yb + oh * Wo;
                for (std::int64_t ow = 0; ow < Wo; ++ow)
                  yr[ow] += wv * xr[ow * stride];
              }
            }
          }
      }
    }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, int stride,
                     const Padding& pad, const Tensor<T>& gy, Tensor<T>* gx,
                     Tensor<T>* gk, Tensor<T>* gb) {
  const std::int64_t B = x.extent(0), Cin = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  const std::int64_t Cout = kernel.extent(0), kh = kernel.extent(2),
                     kw = kernel.extent(3);
  const std::int64_t n = pad.width;
  const std::int64_t Hp = H + 2 * n, Wp = W + 2 * n;
  const std::int64_t Ho = gy.extent(2), Wo = gy.extent(3);
  const double flops = 2.0 * static_cast<double>(B * Cout * Cin * kh * kw) *
                       static_cast<double>(Ho * Wo);

  if (gx) {
    Tensor<T> gpad(Shape{B, Cin, Hp, Wp});
#pragma omp parallel for schedule(static) if (flops > detail::kOmpMinFlops)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Cout; ++co) {
        const T* gyb = gy.data() + (b * Cout + co) * Ho * Wo;
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          T* gc = gpad.data() + (b * Cin + ci) * Hp * Wp;
          for (std::int64_t r = 0; r < kh; ++r)
            for (std::int64_t s = 0; s < kw; ++s) {
              const T wv = kernel[((co * Cin + ci) * kh + r) * kw + s];
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                T* gr = gc + (oh * stride + r) * Wp + s;
                const T* gyr = gyb + oh * Wo;
                if (stride == 1) {
                  for (std::int64_t ow = 0; ow < Wo; ++ow) gr[ow] += wv * gyr[ow];
                } else {
                  for (std::int64_t ow = 0; ow < Wo; ++ow)
                    gr[ow * stride] += wv * gyr[ow];
                }
              }
            }
        }
      }
    if (gx->numel() == 0) *gx = Tensor<T>(x.shape());
    detail::unpad_accumulate(gpad, pad, *gx);
  }

  if (gk) {
    if (gk->numel() == 0) *gk = Tensor<T>(kernel.shape());
    Tensor<T> xp = detail::pad_input(x, pad);
#pragma omp parallel for schedule(static) if (flops > detail::kOmpMinFlops)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t ci = 0; ci < Cin; ++ci)
        for (std::int64_t r = 0; r < kh; ++r)
          for (std::int64_t s = 0; s < kw; ++s) {
            T acc = T(0);
            for (std::int64_t b = 0; b < B; ++b) {
              const T* gyb = gy.data() + (b * Cout + co) * Ho * Wo;
              const T* xc = xp.data() + (b * Cin + ci) * Hp * Wp;
              for (std::int64_t oh = 0; oh < Ho; ++oh) {
                const T* xr = xc + (oh * stride + r) * Wp + s;
                const T* gyr = gyb + oh * Wo;
                if (stride == 1) {
                  for (std::int64_t ow = 0; ow < Wo; ++ow) acc += xr[ow] * gyr[ow];
                } else {
                  for (std::int64_t ow = 0; ow < Wo; ++ow)
                    acc += xr[ow * stride] * gyr[ow];
                }
              }
            }
            (*gk)[((co * Cin + ci) * kh + r) * kw + s] += acc;
          }
  }

  if (gb) {
    if (gb->numel() == 0) *gb = Tensor<T>(Shape{Cout});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Cout; ++co) {
        const T* gyb = gy.data() + (b * Cout + co) * Ho * Wo;
        T acc = T(0);
        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gyb[i];
        (*gb)[co] += acc;
      }
  }
}

// ---------------------------------------------------------------------------
// Pointwise and shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::int64_t i = 0; i < y.numel(); ++i)
    if (y[i] < T(0)) y[i] = T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx = gy;
  for (std::int64_t i = 0; i < gx.numel(); ++i)
    if (x[i] <= T(0)) gx[i] = T(0);
  return gx;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  UNODE_CHECK(axis >= 0 && axis < x.rank(), "softmax: axis out of range");
  std::int64_t inner = 1, outer = 1;
  const std::int64_t len = x.extent(axis);
  for (int i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  Tensor<T> y = x;
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      T* base = y.data() + o * len * inner + in;
      T m = base[0];
      for (std::int64_t k = 1; k < len; ++k) m = std::max(m, base[k * inner]);
      T z = T(0);
      for (std::int64_t k = 0; k < len; ++k) {
        base[k * inner] = std::exp(base[k * inner] - m);
        z += base[k * inner];
      }
      for (std::int64_t k = 0; k < len; ++k) base[k * inner] /= z;
    }
  return y;
}

// Backward from the forward output y = softmax(x).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& gy, int axis) {
  std::int64_t inner = 1, outer = 1;
  const std::int64_t len = y.extent(axis);
  for (int i = 0; i < axis; ++i) outer *= y.extent(i);
  for (int i = axis + 1; i < y.rank(); ++i) inner *= y.extent(i);
  Tensor<T> gx = Tensor<T>::zeros_like(y);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const T* yb = y.data() + o * len * inner + in;
      const T* gb = gy.data() + o * len * inner + in;
      T dot = T(0);
      for (std::int64_t k = 0; k < len; ++k) dot += yb[k * inner] * gb[k * inner];
      T* xb = gx.data() + o * len * inner + in;
      for (std::int64_t k = 0; k < len; ++k)
        xb[k * inner] = yb[k * inner] * (gb[k * inner] - dot);
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Group normalization. Statistics are per (sample, group), never batch-wide:
// the same input pixel normalizes identically regardless of batch company,
// which keeps ODE vector fields well defined per sample.
// ---------------------------------------------------------------------------

template <typename T>
struct GroupNormCtx {
  Tensor<T> xhat;     // normalized pre-affine activations
  Tensor<T> inv_std;  // [B, groups]
  int groups = 1;
};

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps, GroupNormCtx<T>* ctx) {
  const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  UNODE_CHECK(groups >= 1 && C % groups == 0,
              "group_norm: channel count not divisible by groups");
  UNODE_CHECK(gamma.numel() == C && beta.numel() == C,
              "group_norm: affine parameter length mismatch");
  const std::int64_t cg = C / groups, m = cg * H * W;
  Tensor<T> xhat = Tensor<T>::zeros_like(x);
  Tensor<T> inv_std(Shape{B, groups});
  Tensor<T> y = Tensor<T>::zeros_like(x);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* xb = x.data() + (b * C + g * cg) * H * W;
      T mean = T(0);
      for (std::int64_t i = 0; i < m; ++i) mean += xb[i];
      mean /= static_cast<T>(m);
      T var = T(0);
      for (std::int64_t i = 0; i < m; ++i) {
        T d = xb[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[b * groups + g] = is;
      T* xh = xhat.data() + (b * C + g * cg) * H * W;
      T* yb = y.data() + (b * C + g * cg) * H * W;
      for (std::int64_t c = 0; c < cg; ++c) {
        const T ga = gamma[g * cg + c], be = beta[g * cg + c];
        for (std::int64_t i = 0; i < H * W; ++i) {
          const T v = (xb[c * H * W + i] - mean) * is;
          xh[c * H * W + i] = v;
          yb[c * H * W + i] = ga * v + be;
        }
      }
    }
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
    ctx->groups = groups;
  }
  return y;
}

template <typename T>
void group_norm_backward(const GroupNormCtx<T>& ctx, const Tensor<T>& gamma,
                         const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma,
                         Tensor<T>* gbeta) {
  const Tensor<T>& xhat = ctx.xhat;
  const std::int64_t B = xhat.extent(0), C = xhat.extent(1),
                     H = xhat.extent(2), W = xhat.extent(3);
  const int groups = ctx.groups;
  const std::int64_t cg = C / groups, m = cg * H * W;
  if (gx && gx->numel() == 0) *gx = Tensor<T>(xhat.shape());
  if (ggamma && ggamma->numel() == 0) *ggamma = Tensor<T>(Shape{C});
  if (gbeta && gbeta->numel() == 0) *gbeta = Tensor<T>(Shape{C});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t g = 0; g < groups; ++g) {
      const T is = ctx.inv_std[b * groups + g];
      const T* xh = xhat.data() + (b * C + g * cg) * H * W;
      const T* gyb = gy.data() + (b * C + g * cg) * H * W;
      if (gx) {
        // dxhat = gy * gamma; gx = is * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        T sum_dxh = T(0), sum_dxh_xh = T(0);
        for (std::int64_t c = 0; c < cg; ++c) {
          const T ga = gamma[g * cg + c];
          for (std::int64_t i = 0; i < H * W; ++i) {
            const T d = gyb[c * H * W + i] * ga;
            sum_dxh += d;
            sum_dxh_xh += d * xh[c * H * W + i];
          }
        }
        const T mean_dxh = sum_dxh / static_cast<T>(m);
        const T mean_dxh_xh = sum_dxh_xh / static_cast<T>(m);
        T* gxb = gx->data() + (b * C + g * cg) * H * W;
        for (std::int64_t c = 0; c < cg; ++c) {
          const T ga = gamma[g * cg + c];
          for (std::int64_t i = 0; i < H * W; ++i) {
            const T d = gyb[c * H * W + i] * ga;
            gxb[c * H * W + i] +=
                is * (d - mean_dxh - xh[c * H * W + i] * mean_dxh_xh);
          }
        }
      }
      for (std::int64_t c = 0; c < cg; ++c) {
        T sg = T(0), sb = T(0);
        for (std::int64_t i = 0; i < H * W; ++i) {
          sg += gyb[c * H * W + i] * xh[c * H * W + i];
          sb += gyb[c * H * W + i];
        }
        if (ggamma) (*ggamma)[g * cg + c] += sg;
        if (gbeta) (*gbeta)[g * cg + c] += sb;
      }
    }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, nearest 2x upsampling, channel concat/slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, IntMap* argmax) {
  const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  UNODE_CHECK(H % 2 == 0 && W % 2 == 0,
              "maxpool2d: spatial extents must be even");
  Tensor<T> y(Shape{B, C, H / 2, W / 2});
  if (argmax) *argmax = IntMap(y.shape());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * H * W;
    T* yc = y.data() + bc * (H / 2) * (W / 2);
    for (std::int64_t oh = 0; oh < H / 2; ++oh)
      for (std::int64_t ow = 0; ow < W / 2; ++ow) {
        std::int64_t base = (2 * oh) * W + 2 * ow;
        std::int64_t best = base;
        T bv = xc[base];
        const std::int64_t cand[3] = {base + 1, base + W, base + W + 1};
        for (std::int64_t k : cand)
          if (xc[k] > bv) {
            bv = xc[k];
            best = k;
          }
        yc[oh * (W / 2) + ow] = bv;
        if (argmax)
          (*argmax)[bc * (H / 2) * (W / 2) + oh * (W / 2) + ow] =
              static_cast<std::int32_t>(best);
      }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& x_shape, const IntMap& argmax,
                             const Tensor<T>& gy) {
  Tensor<T> gx(x_shape);
  const std::int64_t B = x_shape[0], C = x_shape[1], H = x_shape[2],
                     W = x_shape[3];
  const std::int64_t per = (H / 2) * (W / 2);
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    T* gc = gx.data() + bc * H * W;
    for (std::int64_t i = 0; i < per; ++i)
      gc[argmax[bc * per + i]] += gy[bc * per + i];
  }
  return gx;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  const std::int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2),
                     W = x.extent(3);
  Tensor<T> y(Shape{B, C, 2 * H, 2 * W});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = x.data() + bc * H * W;
    T* yc = y.data() + bc * 4 * H * W;
    for (std::int64_t h = 0; h < 2 * H; ++h)
      for (std::int64_t w = 0; w < 2 * W; ++w)
        yc[h * 2 * W + w] = xc[(h / 2) * W + w / 2];
  }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Shape& x_shape,
                                      const Tensor<T>& gy) {
  Tensor<T> gx(x_shape);
  const std::int64_t B = x_shape[0], C = x_shape[1], H = x_shape[2],
                     W = x_shape[3];
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* gc = gy.data() + bc * 4 * H * W;
    T* xc = gx.data() + bc * H * W;
    for (std::int64_t h = 0; h < 2 * H; ++h)
      for (std::int64_t w = 0; w < 2 * W; ++w)
        xc[(h / 2) * W + w / 2] += gc[h * 2 * W + w];
  }
  return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  UNODE_CHECK(a.extent(0) == b.extent(0) && a.extent(2) == b.extent(2) &&
                  a.extent(3) == b.extent(3),
              "concat_channels: non-channel extents differ");
  const std::int64_t B = a.extent(0), Ca = a.extent(1), Cb = b.extent(1),
                     HW = a.extent(2) * a.extent(3);
  Tensor<T> y(Shape{B, Ca + Cb, a.extent(2), a.extent(3)});
  for (std::int64_t n = 0; n < B; ++n) {
    std::memcpy(y.data() + n * (Ca + Cb) * HW, a.data() + n * Ca * HW,
                static_cast<std::size_t>(Ca * HW) * sizeof(T));
    std::memcpy(y.data() + (n * (Ca + Cb) + Ca) * HW, b.data() + n * Cb * HW,
                static_cast<std::size_t>(Cb * HW) * sizeof(T));
  }
  return y;
}

// Channels [c0, c0+len) of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t c0,
                         std::int64_t len) {
  const std::int64_t B = x.extent(0), C = x.extent(1),
                     HW = x.extent(2) * x.extent(3);
  UNODE_CHECK(c0 >= 0 && c0 + len <= C, "slice_channels: range out of bounds");
  Tensor<T> y(Shape{B, len, x.extent(2), x.extent(3)});
  for (std::int64_t n = 0; n < B; ++n)
    std::memcpy(y.data() + n * len * HW, x.data() + (n * C + c0) * HW,
                static_cast<std::size_t>(len * HW) * sizeof(T));
  return y;
}

// ---------------------------------------------------------------------------
// Pixel-wise cross entropy with mean reduction over B*H*W.
// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropyCtx {
  Tensor<T> probs;  // softmax over the class axis
};

template <typename T>
T cross_entropy(const Tensor<T>& logits, const IntMap& target,
                CrossEntropyCtx<T>* ctx) {
  UNODE_CHECK(logits.rank() == 4 && target.rank() == 3,
              "cross_entropy: expects [B,K,H,W] logits and [B,H,W] targets");
  const std::int64_t B = logits.extent(0), K = logits.extent(1),
                     H = logits.extent(2), W = logits.extent(3);
  UNODE_CHECK(target.extent(0) == B && target.extent(1) == H &&
                  target.extent(2) == W,
              "cross_entropy: target extents mismatch");
  Tensor<T> probs = Tensor<T>::zeros_like(logits);
  double loss = 0.0;
  const std::int64_t HW = H * W;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int32_t t = target[b * HW + i];
      UNODE_CHECK(t >= 0 && t < K, "cross_entropy: target class out of range");
      const T* lp = logits.data() + b * K * HW + i;
      T m = lp[0];
      for (std::int64_t k = 1; k < K; ++k) m = std::max(m, lp[k * HW]);
      T z = T(0);
      for (std::int64_t k = 0; k < K; ++k) z += std::exp(lp[k * HW] - m);
      const T lse = m + std::log(z);
      loss += static_cast<double>(lse - lp[t * HW]);
      T* pp = probs.data() + b * K * HW + i;
      for (std::int64_t k = 0; k < K; ++k)
        pp[k * HW] = std::exp(lp[k * HW] - lse);
    }
  if (ctx) ctx->probs = std::move(probs);
  return static_cast<T>(loss / static_cast<double>(B * HW));
}

template <typename T>
Tensor<T> cross_entropy_backward(const CrossEntropyCtx<T>& ctx,
                                 const IntMap& target, T gloss) {
  const Tensor<T>& probs = ctx.probs;
  const std::int64_t B = probs.extent(0), K = probs.extent(1),
                     HW = probs.extent(2) * probs.extent(3);
  Tensor<T> gx = probs;
  const T scale = gloss / static_cast<T>(B * HW);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < HW; ++i) {
      T* gp = gx.data() + b * K * HW + i;
      const std::int32_t t = target[b * HW + i];
      gp[t * HW] -= T(1);
      for (std::int64_t k = 0; k < K; ++k) gp[k * HW] *= scale;
    }
  return gx;
}

}  // namespace unode
