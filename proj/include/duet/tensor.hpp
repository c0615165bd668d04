#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace duet::ad {

/// Dense row-major tensor of 64-bit floats.
///
/// Every primitive in the engine works on rank-2 tensors; scalars are 1x1.
/// Higher ranks are representable (checkpoints store whatever shape a
/// parameter has) but no primitive consumes them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor scalar(double value) { return Tensor({1, 1}, value); }
  static Tensor identity(std::size_t n);

  [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  /// Rank-2 extents; throws ShapeError on other ranks.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] double* raw() { return data_.data(); }
  [[nodiscard]] const double* raw() const { return data_.data(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a 1x1 tensor.
  [[nodiscard]] double item() const;

  [[nodiscard]] bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    return *this;
  }

  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] std::string shape_string() const;

  /// this += other (same shape).
  void accumulate(const Tensor& other);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace duet::ad
