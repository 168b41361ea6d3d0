#ifndef FLUNET_TENSOR_HPP_
#define FLUNET_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "flunet/error.hpp"

namespace flunet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<std::size_t> row_major_strides(const Shape& shape);

// Dense row-major tensor of doubles. Rank 0 is a scalar (one element).
class Tensor {
 public:
  Tensor() = default;

  // Zero-initialized tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, std::initializer_list<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;  // throws DimError unless size() == 1

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NumericError naming `op` if any element of `t` is NaN or infinite.
void ensure_finite(const Tensor& t, const char* op);

}  // namespace flunet

#endif  // FLUNET_TENSOR_HPP_
