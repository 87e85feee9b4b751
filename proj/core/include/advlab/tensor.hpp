#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same shape. Plain value type: copy, move and compare freely.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Returns the only element; throws ContractError unless size() == 1.
  double item() const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Copies rows [begin, end) of the leading dimension.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Copies the listed rows of the leading dimension, in order.
  Tensor gather_rows(std::span<const std::size_t> rows) const;
  std::size_t row_size() const;

  bool all_finite() const noexcept;

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates (or resets) the gradient buffer to zeros.
  void zero_grad();
  void drop_grad() noexcept { grad_.reset(); }

  /// Compares shape and data bit-for-bit; the gradient buffer is ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

/// Stacks equally shaped tensors along a new leading dimension.
Tensor stack_rows(std::span<const Tensor> rows);

/// Largest |a - b| over all elements. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace advlab
