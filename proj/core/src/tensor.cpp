#include "advlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "advlab/errors.hpp"

namespace advlab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                     " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("tensor: rank-0 tensor has no rows");
  return shape_[0] == 0 ? shape_numel(Shape(shape_.begin() + 1, shape_.end())) : data_.size() / shape_[0];
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ShapeError("tensor: row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(shape_));
  }
  const std::size_t rs = row_size();
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * rs),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * rs)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  const std::size_t rs = row_size();
  Shape s = shape_;
  s[0] = rows.size();
  Tensor out(std::move(s));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) throw ShapeError("tensor: gather row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * rs), rs,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * rs));
  }
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::span<double> Tensor::grad() {
  if (!grad_) throw StateError("tensor: no gradient buffer");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw StateError("tensor: no gradient buffer");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(data_.size(), 0.0);
  }
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  Shape s{rows.size()};
  s.insert(s.end(), rows[0].shape().begin(), rows[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_numel(s));
  for (const auto& r : rows) {
    if (r.shape() != rows[0].shape()) throw ShapeError("stack_rows: mismatched row shapes");
    data.insert(data.end(), r.values().begin(), r.values().end());
  }
  return Tensor(std::move(s), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace advlab
