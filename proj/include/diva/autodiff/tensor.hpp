#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace diva::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Rank-1 tensors behave as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a one-element tensor.
  double item() const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Storage shared between a Var handle and the tape nodes that reference it.
struct Cell {
  Tensor value;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.numel(), 0.0);
    return grad;
  }
};

// Handle to a differentiable value. Copies alias the same cell.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var leaf(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return cell_ != nullptr; }
  const Tensor& value() const { return cell_->value; }
  Tensor& mutable_value() { return cell_->value; }
  const Shape& shape() const { return cell_->value.shape(); }
  std::size_t rows() const { return cell_->value.rows(); }
  std::size_t cols() const { return cell_->value.cols(); }
  std::size_t numel() const { return cell_->value.numel(); }
  double item() const { return cell_->value.item(); }

  bool requires_grad() const { return cell_->requires_grad; }
  void set_requires_grad(bool on) { cell_->requires_grad = on; }

  bool has_grad() const { return !cell_->grad.empty(); }
  // Gradient as a tensor of the value's shape; zeros when none has arrived.
  Tensor grad() const;
  std::span<double> grad_buffer() { return cell_->ensure_grad(); }
  void zero_grad() { cell_->grad.clear(); }

  const std::shared_ptr<Cell>& cell() const { return cell_; }
  bool same_as(const Var& other) const { return cell_ == other.cell_; }

 private:
  std::shared_ptr<Cell> cell_;
};

}  // namespace diva::ad
