#include "diva/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "diva/error.hpp"

namespace diva::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ConfigError("tensor dimension must be positive, got " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ConfigError("tensor dimension must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ConfigError("tensor shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                      " values");
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return shape_[0];
  return data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Var::Var(Tensor value, bool requires_grad) : cell_(std::make_shared<Cell>()) {
  cell_->value = std::move(value);
  cell_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  Tensor g(cell_->value.shape(), 0.0);
  if (!cell_->grad.empty()) std::copy(cell_->grad.begin(), cell_->grad.end(), g.values().begin());
  return g;
}

}  // namespace diva::ad
