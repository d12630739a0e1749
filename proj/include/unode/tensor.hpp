#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "unode/common.hpp"

namespace unode {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense n-dimensional array, row-major. The element type is a template
// parameter: float for training, double for oracle-grade gradient checks.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    UNODE_CHECK(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
                "tensor data length does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t extent(int axis) const { return shape_[axis]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool is_scalar() const { return shape_.empty() && data_.size() == 1; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[i]; }
  const T& operator[](std::int64_t i) const { return data_[i]; }

  // 4-d accessors for image tensors [B, C, H, W].
  std::int64_t offset4(std::int64_t b, std::int64_t c, std::int64_t h,
                       std::int64_t w) const {
    return ((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  T& at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[offset4(b, c, h, w)];
  }
  const T& at4(std::int64_t b, std::int64_t c, std::int64_t h,
               std::int64_t w) const {
    return data_[offset4(b, c, h, w)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    UNODE_CHECK(shape_numel(s) == numel(), "reshape changes element count");
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  T sum() const {
    T acc = T(0);
    for (const T& v : data_) acc += v;
    return acc;
  }

  T abs_max() const {
    T m = T(0);
    for (const T& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
  }

  // this += alpha * x
  void axpy(T alpha, const Tensor& x) {
    check_same(x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += alpha * x.data_[i];
  }

 private:
  static std::size_t checked_numel(const Shape& s) {
    for (auto e : s) UNODE_CHECK(e >= 1, "shape extents must be >= 1");
    return static_cast<std::size_t>(shape_numel(s));
  }
  void check_same(const Tensor& o, const char* what) const {
    UNODE_CHECK(shape_ == o.shape_, std::string("shape mismatch in ") + what +
                                        ": " + shape_str(shape_) + " vs " +
                                        shape_str(o.shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

template <typename T>
Tensor<T> operator*(Tensor<T> a, T s) {
  a *= s;
  return a;
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  UNODE_CHECK(a.same_shape(b), "shape mismatch in elementwise_mul");
  Tensor<T> out = a;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

// Integer image map (instance labels, class indices).
using IntMap = Tensor<std::int32_t>;

}  // namespace unode
