#pragma once

#include <cmath>
#include <random>
#include <string>

#include "avsync/nn/param.hpp"
#include "avsync/tensor.hpp"

namespace avsync::nn {

// Fully connected layer on (rows, in) token matrices.
template <typename S>
struct Linear {
  Index in = 0, out = 0;
  Param<S> weight;  // (out, in) row-major
  Param<S> bias;    // (out)
  Tensor<S> x_cache;

  void init(Index in_dim, Index out_dim, std::mt19937_64& rng, double init_std = 0.02) {
    in = in_dim;
    out = out_dim;
    weight.init({out, in});
    bias.init({out});
    fill_trunc_normal(rng, weight.value.data, init_std);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    const Index R = x.numel() / in;
    if (x.numel() % in != 0) throw TensorError("Linear: input not divisible by in_dim");
    std::vector<Index> out_shape = x.shape;
    out_shape.back() = out;
    Tensor<S> y(out_shape);
    ConstRowMatMap<S> xm(x.data.data(), R, in);
    ConstRowMatMap<S> wm(weight.value.data.data(), out, in);
    RowMatMap<S> ym(y.data.data(), R, out);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value.data.data(), out);
    if (train) x_cache = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const Index R = dy.numel() / out;
    ConstRowMatMap<S> dym(dy.data.data(), R, out);
    ConstRowMatMap<S> xm(x_cache.data.data(), R, in);
    RowMatMap<S> dwm(weight.grad.data.data(), out, in);
    dwm.noalias() += dym.transpose() * xm;
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bias.grad.data.data(), out) +=
        dym.colwise().sum().transpose();
    Tensor<S> dx(x_cache.shape);
    RowMatMap<S> dxm(dx.data.data(), R, in);
    ConstRowMatMap<S> wm(weight.value.data.data(), out, in);
    dxm.noalias() = dym * wm;
    return dx;
  }

  void register_params(const std::string& prefix, ParamRegistry<S>& reg) {
    reg.add(prefix + ".weight", weight);
    reg.add(prefix + ".bias", bias);
  }
};

template <typename S>
struct ReLU {
  Tensor<S> mask_cache;

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> y(x.shape);
    y.data = x.data.max(S(0));
    if (train) {
      mask_cache = Tensor<S>(x.shape);
      mask_cache.data = (x.data > S(0)).template cast<S>();
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    dx.data = dy.data * mask_cache.data;
    return dx;
  }
};

// Exact (erf) GELU as in the ViT reference stack.
template <typename S>
struct GELU {
  Tensor<S> x_cache;

  static S value(S x) {
    return S(0.5) * x * (S(1) + S(std::erf(double(x) * 0.7071067811865476)));
  }
  static S deriv(S x) {
    const double cdf = 0.5 * (1.0 + std::erf(double(x) * 0.7071067811865476));
    const double pdf = 0.3989422804014327 * std::exp(-0.5 * double(x) * double(x));
    return S(cdf + double(x) * pdf);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> y(x.shape);
    for (Index i = 0; i < x.numel(); ++i) y.data[i] = value(x.data[i]);
    if (train) x_cache = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (Index i = 0; i < dy.numel(); ++i) dx.data[i] = dy.data[i] * deriv(x_cache.data[i]);
    return dx;
  }
};

// Inverted dropout with an explicit per-call generator so training stays
// a pure function of (weights, batch, seed).
template <typename S>
struct Dropout {
  double p = 0.0;
  Tensor<S> mask_cache;

  Tensor<S> forward(const Tensor<S>& x, bool train, std::mt19937_64& rng) {
    if (!train || p <= 0.0) {
      mask_cache = Tensor<S>();
      return x;
    }
    std::bernoulli_distribution keep(1.0 - p);
    const S scale = S(1.0 / (1.0 - p));
    mask_cache = Tensor<S>(x.shape);
    Tensor<S> y(x.shape);
    for (Index i = 0; i < x.numel(); ++i) {
      const S m = keep(rng) ? scale : S(0);
      mask_cache.data[i] = m;
      y.data[i] = x.data[i] * m;
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    if (mask_cache.numel() == 0) return dy;
    Tensor<S> dx(dy.shape);
    dx.data = dy.data * mask_cache.data;
    return dx;
  }
};

}  // namespace avsync::nn
