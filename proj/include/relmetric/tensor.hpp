#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relmetric/error.hpp"

namespace relmetric {

// Production builds may define RELMETRIC_SINGLE_PRECISION; tests always run
// in double so that finite-difference checks hold at tight tolerances.
#ifdef RELMETRIC_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. Tables are stored as n x n x channels so that the
// channel vector of a cell is contiguous.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  static Tensor scalar(Real value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  Real at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }

  Real& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Real at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous trailing slice at the given leading index (a row of a matrix,
  // the channel vector of a table cell when called with i * n + j).
  std::span<Real> row(std::size_t i) noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + i * stride, stride};
  }
  std::span<const Real> row(std::size_t i) const noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return {data_.data() + i * stride, stride};
  }

  void fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(Real s) {
    for (Real& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, std::string_view what) const {
    if (shape_ != other.shape_) {
      throw ShapeError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                       shape_string(other.shape_));
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace relmetric
