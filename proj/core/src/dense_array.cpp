#include "cmvae/dense_array.hpp"

#include <numeric>
#include <sstream>
#include <utility>

#include "cmvae/error.hpp"

namespace cmvae {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

DenseArray::DenseArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

DenseArray::DenseArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("array of shape " + shape_string(shape_) + " cannot hold " +
                     std::to_string(data_.size()) + " values");
  }
}

DenseArray DenseArray::scalar(double value) { return DenseArray(Shape{}, std::vector<double>{value}); }

DenseArray DenseArray::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return DenseArray(std::move(shape), std::move(values));
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return DenseArray(Shape{rows, cols}, std::move(values));
}

std::size_t DenseArray::rows() const { return shape_.empty() ? 1 : shape_[0]; }

std::size_t DenseArray::cols() const {
  if (shape_.size() < 2) return 1;
  return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
}

double DenseArray::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() requires a single-element array, got " + shape_string(shape_));
  }
  return data_[0];
}

std::span<const double> DenseArray::row(std::size_t r) const {
  const std::size_t width = cols();
  return std::span<const double>(data_).subspan(r * width, width);
}

DenseArray DenseArray::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return DenseArray(std::move(shape), data_);
}

}  // namespace cmvae
