// Dense n-d tensor on top of Eigen, plus the small RNG helpers shared by the
// data generator and the model initializers. Layout is row-major in the
// logical index order, flattened into one Eigen array.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace avsync {

using Index = Eigen::Index;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;  // column-major
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using RowMatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using ConstRowMatMap = Eigen::Map<const RowMat<S>>;

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<Index>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename S>
struct Tensor {
  std::vector<Index> shape;
  ArrX<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> shp) : shape(std::move(shp)) {
    data.setZero(numel_of(shape));
  }

  static Index numel_of(const std::vector<Index>& s) {
    Index n = 1;
    for (Index d : s) {
      if (d < 0) throw TensorError("negative dimension in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<Index> shp) { return Tensor(std::move(shp)); }

  static Tensor full(std::vector<Index> shp, S value) {
    Tensor t(std::move(shp));
    t.data.setConstant(t.numel(), value);
    return t;
  }

  Index numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  Index dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  bool same_shape(const std::vector<Index>& s) const { return shape == s; }

  void require_shape(const std::vector<Index>& s, const char* what) const {
    if (shape != s)
      throw TensorError(std::string(what) + ": expected shape " + shape_str(s) +
                        ", got " + shape_str(shape));
  }

  // Reinterprets the flat buffer under a new shape (copies the handle, shares
  // nothing; data is value-copied as Tensors are value types).
  Tensor reshaped(std::vector<Index> shp) const {
    if (numel_of(shp) != numel())
      throw TensorError("reshape " + shape_str(shape) + " -> " + shape_str(shp));
    Tensor t;
    t.shape = std::move(shp);
    t.data = data;
    return t;
  }

  S& at(std::initializer_list<Index> idx) { return data[flat_index(idx)]; }
  S at(std::initializer_list<Index> idx) const { return data[flat_index(idx)]; }

  Index flat_index(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
      throw TensorError("index rank mismatch");
    Index flat = 0;
    int i = 0;
    for (Index v : idx) {
      flat = flat * shape[static_cast<size_t>(i)] + v;
      ++i;
    }
    return flat;
  }

  bool all_finite() const { return data.isFinite().all(); }

  // Views the last dimension as columns of a (rows x inner) row-major matrix.
  RowMatMap<S> as_rows(Index rows, Index cols) {
    if (rows * cols != numel()) throw TensorError("as_rows size mismatch");
    return RowMatMap<S>(data.data(), rows, cols);
  }
  ConstRowMatMap<S> as_rows(Index rows, Index cols) const {
    if (rows * cols != numel()) throw TensorError("as_rows size mismatch");
    return ConstRowMatMap<S>(data.data(), rows, cols);
  }
};

// ---------------------------------------------------------------------------
// RNG: explicit, splittable streams so parallel/sharded work stays reproducible.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_streams(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0,
                                std::uint64_t substream = 0) {
  return std::mt19937_64(mix_streams(seed, stream, substream));
}

template <typename S>
void fill_normal(std::mt19937_64& rng, ArrX<S>& a, double stddev, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(dist(rng));
}

// Truncated normal (|x - mean| <= 2 std), the usual ViT weight init.
template <typename S>
void fill_trunc_normal(std::mt19937_64& rng, ArrX<S>& a, double stddev, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (Index i = 0; i < a.size(); ++i) {
    double v = dist(rng);
    while (std::abs(v - mean) > 2.0 * stddev) v = dist(rng);
    a[i] = static_cast<S>(v);
  }
}

template <typename S>
void fill_uniform(std::mt19937_64& rng, ArrX<S>& a, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<S>(dist(rng));
}

}  // namespace avsync
