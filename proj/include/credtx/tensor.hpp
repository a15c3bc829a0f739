#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace credtx {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. data().size() == product(shape()) always.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D access; rank is not checked on the hot path.
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  // 3-D access.
  double& operator()(std::size_t a, std::size_t b, std::size_t c) noexcept {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double operator()(std::size_t a, std::size_t b, std::size_t c) const noexcept {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  void fill(double v) noexcept;
  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;  // rank 2 only
  Tensor row(std::size_t r) const;  // rank 2 only, returns rank-1 tensor

  bool all_finite() const noexcept;
  // Throws NumericError naming `what` when a NaN/Inf is present.
  void require_finite(const std::string& what) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string name, Tensor value);
  void zero_grad() noexcept { grad.fill(0.0); }
};

void zero_grads(std::span<Parameter> params) noexcept;

}  // namespace credtx
