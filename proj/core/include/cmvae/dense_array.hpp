#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cmvae {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Flat row-major array of doubles with an immutable shape.
///
/// Rank 0 is a scalar, rank 1 a vector of length `shape[0]`, rank 2 a
/// `[rows, cols]` matrix. Higher ranks are stored but only reshaped.
class DenseArray {
 public:
  DenseArray() : shape_{0} {}
  explicit DenseArray(Shape shape, double fill = 0.0);
  DenseArray(Shape shape, std::vector<double> data);

  static DenseArray scalar(double value);
  static DenseArray vector(std::vector<double> values);
  static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading extent (1 for scalars) and the number of entries per leading
  // index (1 for scalars and vectors).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const;
  std::span<const double> row(std::size_t r) const;

  DenseArray reshaped(Shape shape) const;

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace cmvae
