#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cpg/error.hpp"

namespace cpg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape);

// Dense row-major tensor over a single IEEE float type. No views, no
// strides; data is always contiguous and owned. Rank 0 is a scalar.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() : shape_{}, data_(1, T(0)) {}

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), T(0)) {
    check_extents();
  }

  TensorT(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    CPG_CHECK(data_.size() == shape_size(shape_), Errc::shape,
              "data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_str(shape_));
  }

  static TensorT scalar(T v) {
    TensorT t;
    t.data_[0] = v;
    return t;
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, T v) {
    TensorT t(std::move(shape));
    for (T& x : t.data_) x = v;
    return t;
  }

  static TensorT identity(std::size_t n) {
    TensorT t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  static TensorT row_vector(std::initializer_list<T> v) {
    return TensorT(Shape{v.size()}, std::vector<T>(v));
  }

  static TensorT matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      CPG_CHECK(row.size() == c, Errc::shape, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return TensorT(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D access.
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  T item() const {
    CPG_CHECK(size() == 1, Errc::contract, "item() on non-scalar tensor");
    return data_[0];
  }

  bool is_scalar() const { return size() == 1 && rank() <= 1; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool operator==(const TensorT& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  TensorT<double> to_double() const {
    std::vector<double> d(data_.begin(), data_.end());
    return TensorT<double>(shape_, std::move(d));
  }

  TensorT<float> to_float() const {
    std::vector<float> d(data_.begin(), data_.end());
    return TensorT<float>(shape_, std::move(d));
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      CPG_CHECK(e > 0, Errc::shape, "zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace cpg
