#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dmcl/errors.hpp"

namespace dmcl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// Dense row-major tensor. Images and activations use NCHW.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D access.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Number of elements per leading index (one sample of a batch).
  std::size_t stride0() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Rows [begin, end) along the leading axis.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  Shape s = t.shape();
  s[0] = end - begin;
  const std::size_t row = t.stride0();
  return Tensor<T>(s, std::vector<T>(t.data() + begin * row, t.data() + end * row));
}

// Concatenation along the leading axis; all trailing dimensions must match.
template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front()->shape();
  std::size_t rows = 0;
  for (const auto* p : parts) {
    if (!std::equal(p->shape().begin() + 1, p->shape().end(), s.begin() + 1, s.end()))
      throw ShapeError("concat_rows: mismatched shapes " + shape_string(p->shape()) + " vs " +
                       shape_string(s));
    rows += p->dim(0);
  }
  s[0] = rows;
  std::vector<T> data;
  data.reserve(shape_size(s));
  for (const auto* p : parts) data.insert(data.end(), p->storage().begin(), p->storage().end());
  return Tensor<T>(std::move(s), std::move(data));
}

}  // namespace dmcl
