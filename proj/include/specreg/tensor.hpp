#ifndef SPECREG_TENSOR_HPP
#define SPECREG_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "specreg/errors.hpp"

namespace specreg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense n-dimensional array, row-major, value semantics. The only numeric
// carrier in the library; precision is the template parameter.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i0) { return data_[i0]; }
  const T& operator()(std::size_t i0) const { return data_[i0]; }
  T& operator()(std::size_t i0, std::size_t i1) { return data_[i0 * shape_[1] + i1]; }
  const T& operator()(std::size_t i0, std::size_t i1) const { return data_[i0 * shape_[1] + i1]; }
  T& operator()(std::size_t i0, std::size_t i1, std::size_t i2) {
    return data_[(i0 * shape_[1] + i1) * shape_[2] + i2];
  }
  const T& operator()(std::size_t i0, std::size_t i1, std::size_t i2) const {
    return data_[(i0 * shape_[1] + i1) * shape_[2] + i2];
  }
  T& operator()(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }
  const T& operator()(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return data_[((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                       " changes element count");
    Tensor out = *this;
    out.shape_ = std::move(new_shape);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    check_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
  }
  // this += s * o
  Tensor& axpy(T s, const Tensor& o) {
    check_same_shape(o, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    return *this;
  }

  T dot(const Tensor& o) const {
    check_same_shape(o, "dot");
    T s = 0;
    for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
    return s;
  }
  T squared_norm() const {
    T s = 0;
    for (T v : data_) s += v * v;
    return s;
  }
  T norm() const { return std::sqrt(squared_norm()); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void check_same_shape(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      throw ShapeError(std::string("tensor ") + op + ": shape mismatch " + shape_str(shape_) +
                       " vs " + shape_str(o.shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Integer companion tensor for max-pool argmax positions.
class IndexTensor {
 public:
  IndexTensor() = default;
  explicit IndexTensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::int64_t* data() noexcept { return data_.data(); }
  const std::int64_t* data() const noexcept { return data_.data(); }
  std::int64_t& operator[](std::size_t i) { return data_[i]; }
  const std::int64_t& operator[](std::size_t i) const { return data_[i]; }

 private:
  Shape shape_;
  std::vector<std::int64_t> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.vec())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* context) {
  if (!all_finite(t)) throw NonFiniteError(std::string(context) + ": non-finite values");
}

// Per-sample shape of a batched tensor (drops the leading batch axis).
inline Shape sample_shape(const Shape& batched) {
  if (batched.empty()) throw ShapeError("sample_shape: rank-0 tensor");
  return Shape(batched.begin() + 1, batched.end());
}

inline Shape with_batch(std::size_t batch, const Shape& per_sample) {
  Shape s;
  s.reserve(per_sample.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

// Copies sample i of a batched tensor into a batch-1 tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& batched, std::size_t i) {
  const std::size_t stride = batched.numel() / batched.extent(0);
  Tensor<T> out(with_batch(1, sample_shape(batched.shape())));
  std::copy(batched.data() + i * stride, batched.data() + (i + 1) * stride, out.data());
  return out;
}

template <typename T>
void set_batch_slice(Tensor<T>& batched, std::size_t i, const Tensor<T>& sample) {
  const std::size_t stride = batched.numel() / batched.extent(0);
  if (sample.numel() != stride) throw ShapeError("set_batch_slice: sample size mismatch");
  std::copy(sample.data(), sample.data() + stride, batched.data() + i * stride);
}

// Row helpers for (rows, dim) matrices.
template <typename T>
T row_norm(const Tensor<T>& m, std::size_t row) {
  const std::size_t d = m.numel() / m.extent(0);
  const T* p = m.data() + row * d;
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) s += p[j] * p[j];
  return std::sqrt(s);
}

// Scales every row to unit norm; all-zero rows are left untouched.
template <typename T>
void normalize_rows(Tensor<T>& m) {
  const std::size_t rows = m.extent(0);
  const std::size_t d = m.numel() / rows;
  for (std::size_t i = 0; i < rows; ++i) {
    T n = row_norm(m, i);
    if (n > T(0)) {
      T* p = m.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) p[j] /= n;
    }
  }
}

template <typename T>
T row_dot(const Tensor<T>& a, const Tensor<T>& b, std::size_t row) {
  const std::size_t d = a.numel() / a.extent(0);
  const T* pa = a.data() + row * d;
  const T* pb = b.data() + row * d;
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) s += pa[j] * pb[j];
  return s;
}

}  // namespace specreg

#endif  // SPECREG_TENSOR_HPP
