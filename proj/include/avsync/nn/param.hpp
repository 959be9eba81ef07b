#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avsync/tensor.hpp"

namespace avsync::nn {

// A trainable tensor and its gradient accumulator. backward() passes always
// accumulate (+=) so gradient accumulation over micro-batches is the default;
// callers zero grads explicitly at step boundaries.
template <typename S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;

  void init(std::vector<Index> shape) {
    value = Tensor<S>(shape);
    grad = Tensor<S>(std::move(shape));
  }
  Index numel() const { return value.numel(); }
};

template <typename S>
struct ParamRef {
  std::string name;
  Param<S>* param = nullptr;
  bool trainable = true;  // false: persistent buffer (e.g. running statistics)
};

// Flat, ordered view over a model's parameters. Order is the registration
// order and is stable across runs, which the optimizer and checkpoint
// container both rely on.
template <typename S>
class ParamRegistry {
 public:
  void add(const std::string& name, Param<S>& p, bool trainable = true) {
    refs_.push_back({name, &p, trainable});
  }

  const std::vector<ParamRef<S>>& refs() const { return refs_; }
  size_t size() const { return refs_.size(); }

  Index total_count() const {
    Index n = 0;
    for (const auto& r : refs_) n += r.param->numel();
    return n;
  }

  Index trainable_count() const {
    Index n = 0;
    for (const auto& r : refs_)
      if (r.trainable) n += r.param->numel();
    return n;
  }

  void zero_grads() {
    for (auto& r : refs_) r.param->grad.data.setZero();
  }

  Param<S>* find(const std::string& name) {
    for (auto& r : refs_)
      if (r.name == name) return r.param;
    return nullptr;
  }

 private:
  std::vector<ParamRef<S>> refs_;
};

}  // namespace avsync::nn
