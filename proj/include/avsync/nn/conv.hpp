// GEMM-backed 2D/3D convolutions (im2col) with per-axis padding modes.
// The time axis of both encoders is replicate-padded so a constant-in-time
// input stays constant in time end to end; frequency/spatial axes use zero
// padding. Backward recomputes im2col from the cached input instead of
// holding the column matrix between passes.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "avsync/nn/param.hpp"
#include "avsync/tensor.hpp"

namespace avsync::nn {

enum class PadMode { zero, replicate };

inline Index conv_out_len(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Resolves a padded coordinate. Returns false when the sample lies in a
// zero-padded region (contributes nothing / receives no gradient).
inline bool pad_coord(Index v, Index size, PadMode mode, Index& out) {
  if (v >= 0 && v < size) {
    out = v;
    return true;
  }
  if (mode == PadMode::replicate) {
    out = std::clamp<Index>(v, 0, size - 1);
    return true;
  }
  return false;
}

}  // namespace detail

template <typename S>
void kaiming_init(std::mt19937_64& rng, Param<S>& w, Index fan_out) {
  fill_normal(rng, w.value.data, std::sqrt(2.0 / static_cast<double>(fan_out)));
}

// ---------------------------------------------------------------------------
// Conv2d over (N, C, F, T); weight (O, C, kf, kt); no bias (norm follows).

template <typename S>
struct Conv2d {
  Index C = 0, O = 0, kf = 1, kt = 1, sf = 1, st = 1, pf = 0, pt = 0;
  PadMode pad_f = PadMode::zero, pad_t = PadMode::replicate;
  Param<S> weight;
  Tensor<S> x_cache;

  void init(Index in_ch, Index out_ch, Index kf_, Index kt_, Index sf_, Index st_,
            Index pf_, Index pt_, std::mt19937_64& rng) {
    C = in_ch;
    O = out_ch;
    kf = kf_;
    kt = kt_;
    sf = sf_;
    st = st_;
    pf = pf_;
    pt = pt_;
    weight.init({O, C, kf, kt});
    kaiming_init(rng, weight, O * kf * kt);
  }

  Index patch_len() const { return C * kf * kt; }

  void im2col(const Tensor<S>& x, Mat<S>& cols) const {
    const Index N = x.dim(0), F = x.dim(2), T = x.dim(3);
    const Index Fo = conv_out_len(F, kf, sf, pf), To = conv_out_len(T, kt, st, pt);
    const Index K = patch_len();
    cols.resize(K, N * Fo * To);
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < N; ++n) {
      const S* xn = x.data.data() + n * C * F * T;
      for (Index fo = 0; fo < Fo; ++fo) {
        for (Index to = 0; to < To; ++to) {
          S* dst = cols.data() + ((n * Fo + fo) * To + to) * K;
          const Index f0 = fo * sf - pf, t0 = to * st - pt;
          for (Index c = 0; c < C; ++c) {
            for (Index i = 0; i < kf; ++i) {
              Index fi;
              const bool f_ok = detail::pad_coord(f0 + i, F, pad_f, fi);
              for (Index j = 0; j < kt; ++j) {
                Index ti;
                S v = S(0);
                if (f_ok && detail::pad_coord(t0 + j, T, pad_t, ti))
                  v = xn[(c * F + fi) * T + ti];
                *dst++ = v;
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<S>& cols, Tensor<S>& dx) const {
    const Index N = dx.dim(0), F = dx.dim(2), T = dx.dim(3);
    const Index Fo = conv_out_len(F, kf, sf, pf), To = conv_out_len(T, kt, st, pt);
    const Index K = patch_len();
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < N; ++n) {
      S* xn = dx.data.data() + n * C * F * T;
      for (Index fo = 0; fo < Fo; ++fo) {
        for (Index to = 0; to < To; ++to) {
          const S* src = cols.data() + ((n * Fo + fo) * To + to) * K;
          const Index f0 = fo * sf - pf, t0 = to * st - pt;
          for (Index c = 0; c < C; ++c) {
            for (Index i = 0; i < kf; ++i) {
              Index fi;
              const bool f_ok = detail::pad_coord(f0 + i, F, pad_f, fi);
              for (Index j = 0; j < kt; ++j) {
                Index ti;
                if (f_ok && detail::pad_coord(t0 + j, T, pad_t, ti))
                  xn[(c * F + fi) * T + ti] += src[(c * kf + i) * kt + j];
              }
            }
          }
        }
      }
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    if (x.ndim() != 4 || x.dim(1) != C)
      throw TensorError("Conv2d: bad input shape " + shape_str(x.shape));
    const Index N = x.dim(0), F = x.dim(2), T = x.dim(3);
    const Index Fo = conv_out_len(F, kf, sf, pf), To = conv_out_len(T, kt, st, pt);
    Mat<S> cols;
    im2col(x, cols);
    ConstRowMatMap<S> w(weight.value.data.data(), O, patch_len());
    Mat<S> out = w * cols;  // (O, N*Fo*To)
    Tensor<S> y({N, O, Fo, To});
    const Index FT = Fo * To;
    for (Index n = 0; n < N; ++n) {
      MatMap<S> yn(y.data.data() + n * O * FT, FT, O);
      yn.noalias() = out.middleCols(n * FT, FT).transpose();
    }
    if (train) x_cache = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Tensor<S>& x = x_cache;
    const Index N = x.dim(0), F = x.dim(2), T = x.dim(3);
    const Index Fo = dy.dim(2), To = dy.dim(3), FT = Fo * To;
    Mat<S> dy_mat(O, N * FT);
    for (Index n = 0; n < N; ++n) {
      ConstMatMap<S> dyn(dy.data.data() + n * O * FT, FT, O);
      dy_mat.middleCols(n * FT, FT) = dyn.transpose();
    }
    Mat<S> cols;
    im2col(x, cols);
    RowMatMap<S> dw(weight.grad.data.data(), O, patch_len());
    dw.noalias() += dy_mat * cols.transpose();
    ConstRowMatMap<S> w(weight.value.data.data(), O, patch_len());
    Mat<S> dcols = w.transpose() * dy_mat;
    Tensor<S> dx({N, C, F, T});
    col2im(dcols, dx);
    return dx;
  }

  void register_params(const std::string& prefix, ParamRegistry<S>& reg) {
    reg.add(prefix + ".weight", weight);
  }
};

// ---------------------------------------------------------------------------
// Conv3d over (N, C, T, H, W); weight (O, C, kt, kh, kw); temporal stride is
// always 1 in this project but kept general.

template <typename S>
struct Conv3d {
  Index C = 0, O = 0, kt = 1, kh = 1, kw = 1, st = 1, sh = 1, sw = 1, pt = 0, ph = 0, pw = 0;
  PadMode pad_t = PadMode::replicate, pad_s = PadMode::zero;
  Param<S> weight;
  Tensor<S> x_cache;

  void init(Index in_ch, Index out_ch, Index kt_, Index kh_, Index kw_, Index st_, Index sh_,
            Index sw_, Index pt_, Index ph_, Index pw_, std::mt19937_64& rng) {
    C = in_ch;
    O = out_ch;
    kt = kt_;
    kh = kh_;
    kw = kw_;
    st = st_;
    sh = sh_;
    sw = sw_;
    pt = pt_;
    ph = ph_;
    pw = pw_;
    weight.init({O, C, kt, kh, kw});
    kaiming_init(rng, weight, O * kt * kh * kw);
  }

  Index patch_len() const { return C * kt * kh * kw; }

  void im2col(const Tensor<S>& x, Mat<S>& cols) const {
    const Index N = x.dim(0), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const Index To = conv_out_len(T, kt, st, pt), Ho = conv_out_len(H, kh, sh, ph),
                Wo = conv_out_len(W, kw, sw, pw);
    const Index K = patch_len();
    cols.resize(K, N * To * Ho * Wo);
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < N; ++n) {
      const S* xn = x.data.data() + n * C * T * H * W;
      for (Index to = 0; to < To; ++to) {
        for (Index ho = 0; ho < Ho; ++ho) {
          for (Index wo = 0; wo < Wo; ++wo) {
            S* dst = cols.data() + (((n * To + to) * Ho + ho) * Wo + wo) * K;
            const Index t0 = to * st - pt, h0 = ho * sh - ph, w0 = wo * sw - pw;
            for (Index c = 0; c < C; ++c) {
              for (Index a = 0; a < kt; ++a) {
                Index ti;
                const bool t_ok = detail::pad_coord(t0 + a, T, pad_t, ti);
                for (Index b = 0; b < kh; ++b) {
                  Index hi;
                  const bool h_ok = t_ok && detail::pad_coord(h0 + b, H, pad_s, hi);
                  for (Index d = 0; d < kw; ++d) {
                    Index wi;
                    S v = S(0);
                    if (h_ok && detail::pad_coord(w0 + d, W, pad_s, wi))
                      v = xn[((c * T + ti) * H + hi) * W + wi];
                    *dst++ = v;
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<S>& cols, Tensor<S>& dx) const {
    const Index N = dx.dim(0), T = dx.dim(2), H = dx.dim(3), W = dx.dim(4);
    const Index To = conv_out_len(T, kt, st, pt), Ho = conv_out_len(H, kh, sh, ph),
                Wo = conv_out_len(W, kw, sw, pw);
    const Index K = patch_len();
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < N; ++n) {
      S* xn = dx.data.data() + n * C * T * H * W;
      for (Index to = 0; to < To; ++to) {
        for (Index ho = 0; ho < Ho; ++ho) {
          for (Index wo = 0; wo < Wo; ++wo) {
            const S* src = cols.data() + (((n * To + to) * Ho + ho) * Wo + wo) * K;
            const Index t0 = to * st - pt, h0 = ho * sh - ph, w0 = wo * sw - pw;
            Index k = 0;
            for (Index c = 0; c < C; ++c) {
              for (Index a = 0; a < kt; ++a) {
                Index ti;
                const bool t_ok = detail::pad_coord(t0 + a, T, pad_t, ti);
                for (Index b = 0; b < kh; ++b) {
                  Index hi;
                  const bool h_ok = t_ok && detail::pad_coord(h0 + b, H, pad_s, hi);
                  for (Index d = 0; d < kw; ++d, ++k) {
                    Index wi;
                    if (h_ok && detail::pad_coord(w0 + d, W, pad_s, wi))
                      xn[((c * T + ti) * H + hi) * W + wi] += src[k];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    if (x.ndim() != 5 || x.dim(1) != C)
      throw TensorError("Conv3d: bad input shape " + shape_str(x.shape));
    const Index N = x.dim(0), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const Index To = conv_out_len(T, kt, st, pt), Ho = conv_out_len(H, kh, sh, ph),
                Wo = conv_out_len(W, kw, sw, pw);
    Mat<S> cols;
    im2col(x, cols);
    ConstRowMatMap<S> w(weight.value.data.data(), O, patch_len());
    Mat<S> out = w * cols;
    Tensor<S> y({N, O, To, Ho, Wo});
    const Index THW = To * Ho * Wo;
    for (Index n = 0; n < N; ++n) {
      MatMap<S> yn(y.data.data() + n * O * THW, THW, O);
      yn.noalias() = out.middleCols(n * THW, THW).transpose();
    }
    if (train) x_cache = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Tensor<S>& x = x_cache;
    const Index N = x.dim(0), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const Index THW = dy.dim(2) * dy.dim(3) * dy.dim(4);
    Mat<S> dy_mat(O, N * THW);
    for (Index n = 0; n < N; ++n) {
      ConstMatMap<S> dyn(dy.data.data() + n * O * THW, THW, O);
      dy_mat.middleCols(n * THW, THW) = dyn.transpose();
    }
    Mat<S> cols;
    im2col(x, cols);
    RowMatMap<S> dw(weight.grad.data.data(), O, patch_len());
    dw.noalias() += dy_mat * cols.transpose();
    ConstRowMatMap<S> w(weight.value.data.data(), O, patch_len());
    Mat<S> dcols = w.transpose() * dy_mat;
    Tensor<S> dx({N, C, T, H, W});
    col2im(dcols, dx);
    return dx;
  }

  void register_params(const std::string& prefix, ParamRegistry<S>& reg) {
    reg.add(prefix + ".weight", weight);
  }
};

}  // namespace avsync::nn
