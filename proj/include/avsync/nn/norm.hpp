// Feature normalization for the CNN encoders (batch or group statistics
// behind one interface) and token LayerNorm for the transformers.
//
// Batch mode follows the reference-ResNet convention: per-batch statistics in
// training, running statistics at inference. Group mode uses per-item
// statistics in both modes, which keeps desk-scale micro-batches stable and
// every forward pass independent of batch composition.
#pragma once

#include <cmath>
#include <string>

#include "avsync/nn/param.hpp"
#include "avsync/tensor.hpp"

namespace avsync::nn {

enum class NormKind { batch, group };

template <typename S>
struct FeatureNorm {
  NormKind kind = NormKind::batch;
  Index C = 0;
  Index groups = 1;
  double eps = 1e-5;
  double momentum = 0.1;

  Param<S> gamma, beta;
  Param<S> running_mean, running_var;  // batch mode buffers, never trained

  // backward caches
  Tensor<S> xhat_cache;
  ArrX<S> inv_std_cache;  // one per reduction set
  bool used_batch_stats = false;

  void init(NormKind k, Index channels, Index group_channels) {
    kind = k;
    C = channels;
    groups = (kind == NormKind::group) ? std::max<Index>(1, C / group_channels) : 1;
    if (kind == NormKind::group && C % groups != 0)
      throw TensorError("FeatureNorm: channels not divisible by groups");
    gamma.init({C});
    beta.init({C});
    gamma.value.data.setOnes();
    running_mean.init({C});
    running_var.init({C});
    running_var.value.data.setOnes();
  }

  // x: (N, C, spatial...) row-major, so each (n, c) slice is contiguous.
  Tensor<S> forward(const Tensor<S>& x, bool train) {
    const Index N = x.dim(0);
    if (x.dim(1) != C) throw TensorError("FeatureNorm: channel mismatch");
    const Index Sp = x.numel() / (N * C);
    Tensor<S> y(x.shape);
    xhat_cache = Tensor<S>(x.shape);
    used_batch_stats = (kind == NormKind::batch) && train;

    if (kind == NormKind::batch) {
      ArrX<S> mean(C), var(C);
      if (train) {
        const double m = static_cast<double>(N * Sp);
        for (Index c = 0; c < C; ++c) {
          double sum = 0, sq = 0;
          for (Index n = 0; n < N; ++n) {
            const S* p = x.data.data() + (n * C + c) * Sp;
            for (Index i = 0; i < Sp; ++i) {
              sum += p[i];
              sq += double(p[i]) * double(p[i]);
            }
          }
          const double mu = sum / m;
          mean[c] = S(mu);
          var[c] = S(std::max(0.0, sq / m - mu * mu));
        }
        // unbiased variance for the running buffer, biased for normalization
        const double unbias = m > 1 ? m / (m - 1.0) : 1.0;
        for (Index c = 0; c < C; ++c) {
          running_mean.value.data[c] =
              S((1.0 - momentum) * running_mean.value.data[c] + momentum * mean[c]);
          running_var.value.data[c] =
              S((1.0 - momentum) * running_var.value.data[c] + momentum * var[c] * unbias);
        }
      } else {
        mean = running_mean.value.data;
        var = running_var.value.data;
      }
      inv_std_cache.resize(C);
      for (Index c = 0; c < C; ++c) inv_std_cache[c] = S(1.0 / std::sqrt(double(var[c]) + eps));
      for (Index n = 0; n < N; ++n) {
        for (Index c = 0; c < C; ++c) {
          const S* p = x.data.data() + (n * C + c) * Sp;
          S* xh = xhat_cache.data.data() + (n * C + c) * Sp;
          S* yo = y.data.data() + (n * C + c) * Sp;
          const S mu = mean[c], is = inv_std_cache[c], g = gamma.value.data[c],
                  b = beta.value.data[c];
          for (Index i = 0; i < Sp; ++i) {
            xh[i] = (p[i] - mu) * is;
            yo[i] = g * xh[i] + b;
          }
        }
      }
    } else {
      const Index Cg = C / groups;
      const Index block = Cg * Sp;
      inv_std_cache.resize(N * groups);
      for (Index n = 0; n < N; ++n) {
        for (Index g = 0; g < groups; ++g) {
          const S* p = x.data.data() + (n * C + g * Cg) * Sp;
          double sum = 0, sq = 0;
          for (Index i = 0; i < block; ++i) {
            sum += p[i];
            sq += double(p[i]) * double(p[i]);
          }
          const double mu = sum / block;
          const double var = std::max(0.0, sq / block - mu * mu);
          const S is = S(1.0 / std::sqrt(var + eps));
          inv_std_cache[n * groups + g] = is;
          S* xh = xhat_cache.data.data() + (n * C + g * Cg) * Sp;
          S* yo = y.data.data() + (n * C + g * Cg) * Sp;
          for (Index c = 0; c < Cg; ++c) {
            const S gm = gamma.value.data[g * Cg + c], bt = beta.value.data[g * Cg + c];
            for (Index i = 0; i < Sp; ++i) {
              const S v = S((p[c * Sp + i] - mu) * is);
              xh[c * Sp + i] = v;
              yo[c * Sp + i] = gm * v + bt;
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Index N = dy.dim(0);
    const Index Sp = dy.numel() / (N * C);
    Tensor<S> dx(dy.shape);
    const Tensor<S>& xh = xhat_cache;

    // dgamma / dbeta are identical in every mode
    for (Index n = 0; n < N; ++n) {
      for (Index c = 0; c < C; ++c) {
        const S* d = dy.data.data() + (n * C + c) * Sp;
        const S* h = xh.data.data() + (n * C + c) * Sp;
        double dg = 0, db = 0;
        for (Index i = 0; i < Sp; ++i) {
          dg += double(d[i]) * double(h[i]);
          db += d[i];
        }
        gamma.grad.data[c] += S(dg);
        beta.grad.data[c] += S(db);
      }
    }

    if (kind == NormKind::batch && !used_batch_stats) {
      // inference statistics are constants
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) {
          const S* d = dy.data.data() + (n * C + c) * Sp;
          S* o = dx.data.data() + (n * C + c) * Sp;
          const S k = gamma.value.data[c] * inv_std_cache[c];
          for (Index i = 0; i < Sp; ++i) o[i] = k * d[i];
        }
      return dx;
    }

    if (kind == NormKind::batch) {
      const double m = static_cast<double>(N * Sp);
      for (Index c = 0; c < C; ++c) {
        double sum_t = 0, sum_th = 0;
        for (Index n = 0; n < N; ++n) {
          const S* d = dy.data.data() + (n * C + c) * Sp;
          const S* h = xh.data.data() + (n * C + c) * Sp;
          for (Index i = 0; i < Sp; ++i) {
            const double t = double(d[i]) * double(gamma.value.data[c]);
            sum_t += t;
            sum_th += t * double(h[i]);
          }
        }
        const double mt = sum_t / m, mth = sum_th / m;
        const S is = inv_std_cache[c], g = gamma.value.data[c];
        for (Index n = 0; n < N; ++n) {
          const S* d = dy.data.data() + (n * C + c) * Sp;
          const S* h = xh.data.data() + (n * C + c) * Sp;
          S* o = dx.data.data() + (n * C + c) * Sp;
          for (Index i = 0; i < Sp; ++i)
            o[i] = S(is * (double(d[i]) * g - mt - double(h[i]) * mth));
        }
      }
    } else {
      const Index Cg = C / groups;
      const Index block = Cg * Sp;
      for (Index n = 0; n < N; ++n) {
        for (Index g = 0; g < groups; ++g) {
          const S* d = dy.data.data() + (n * C + g * Cg) * Sp;
          const S* h = xh.data.data() + (n * C + g * Cg) * Sp;
          double sum_t = 0, sum_th = 0;
          for (Index c = 0; c < Cg; ++c) {
            const double gm = gamma.value.data[g * Cg + c];
            for (Index i = 0; i < Sp; ++i) {
              const double t = double(d[c * Sp + i]) * gm;
              sum_t += t;
              sum_th += t * double(h[c * Sp + i]);
            }
          }
          const double mt = sum_t / block, mth = sum_th / block;
          const S is = inv_std_cache[n * groups + g];
          S* o = dx.data.data() + (n * C + g * Cg) * Sp;
          for (Index c = 0; c < Cg; ++c) {
            const double gm = gamma.value.data[g * Cg + c];
            for (Index i = 0; i < Sp; ++i)
              o[c * Sp + i] =
                  S(double(is) * (double(d[c * Sp + i]) * gm - mt - double(h[c * Sp + i]) * mth));
          }
        }
      }
    }
    return dx;
  }

  void register_params(const std::string& prefix, ParamRegistry<S>& reg) {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
    if (kind == NormKind::batch) {
      reg.add(prefix + ".running_mean", running_mean, /*trainable=*/false);
      reg.add(prefix + ".running_var", running_var, /*trainable=*/false);
    }
  }
};

// ---------------------------------------------------------------------------
// LayerNorm over the last dimension of (rows, d) token matrices.

template <typename S>
struct LayerNorm {
  Index d = 0;
  double eps = 1e-5;
  Param<S> gamma, beta;

  Tensor<S> xhat_cache;
  ArrX<S> inv_std_cache;

  void init(Index dim) {
    d = dim;
    gamma.init({d});
    beta.init({d});
    gamma.value.data.setOnes();
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    (void)train;
    const Index R = x.numel() / d;
    Tensor<S> y(x.shape);
    xhat_cache = Tensor<S>(x.shape);
    inv_std_cache.resize(R);
    for (Index r = 0; r < R; ++r) {
      const S* p = x.data.data() + r * d;
      double sum = 0, sq = 0;
      for (Index i = 0; i < d; ++i) {
        sum += p[i];
        sq += double(p[i]) * double(p[i]);
      }
      const double mu = sum / d;
      const double var = std::max(0.0, sq / d - mu * mu);
      const S is = S(1.0 / std::sqrt(var + eps));
      inv_std_cache[r] = is;
      S* xh = xhat_cache.data.data() + r * d;
      S* yo = y.data.data() + r * d;
      for (Index i = 0; i < d; ++i) {
        xh[i] = S((p[i] - mu) * is);
        yo[i] = gamma.value.data[i] * xh[i] + beta.value.data[i];
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Index R = dy.numel() / d;
    Tensor<S> dx(dy.shape);
    for (Index r = 0; r < R; ++r) {
      const S* dyp = dy.data.data() + r * d;
      const S* h = xhat_cache.data.data() + r * d;
      S* o = dx.data.data() + r * d;
      double sum_t = 0, sum_th = 0;
      for (Index i = 0; i < d; ++i) {
        const double t = double(dyp[i]) * double(gamma.value.data[i]);
        sum_t += t;
        sum_th += t * double(h[i]);
        gamma.grad.data[i] += S(double(dyp[i]) * double(h[i]));
        beta.grad.data[i] += dyp[i];
      }
      const double mt = sum_t / d, mth = sum_th / d;
      const double is = inv_std_cache[r];
      for (Index i = 0; i < d; ++i)
        o[i] = S(is * (double(dyp[i]) * double(gamma.value.data[i]) - mt - double(h[i]) * mth));
    }
    return dx;
  }

  void register_params(const std::string& prefix, ParamRegistry<S>& reg) {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
  }
};

}  // namespace avsync::nn
