#include "contilearn/tensor.hpp"

#include <cmath>
#include <cstdio>

namespace contilearn {

std::string to_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

void check_finite(const std::vector<double>& values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(n, 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("data length does not match shape");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

int64_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows(): tensor is not 2-d");
  return dim(0);
}

int64_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols(): tensor is not 2-d");
  return dim(1);
}

double& Tensor::at(int64_t r, int64_t c) {
  return node().data[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
  return node().data[static_cast<size_t>(r * cols() + c)];
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw DimensionError("scalar_value(): tensor has more than one element");
  return node().data[0];
}

std::vector<double>& Tensor::grad() {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

const std::vector<double>& Tensor::grad() const {
  const auto& n = node();
  if (n.grad.empty()) throw UsageError("gradient not populated");
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = node();
  n.grad.assign(n.data.size(), 0.0);
}

Tensor Tensor::clone() const {
  const auto& n = node();
  auto copy = std::make_shared<detail::TensorNode>();
  copy->shape = n.shape;
  copy->data = n.data;
  copy->requires_grad = n.requires_grad;
  return Tensor(std::move(copy));
}

uint64_t Tensor::digest() const {
  const auto& d = node().data;
  return fnv1a64(d.data(), d.size() * sizeof(double));
}

Tensor Tape::make_output(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad) {
  Tensor t = Tensor::from_data(std::move(shape), std::move(data), requires_grad);
  t.node_ptr()->producer = this;
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw UsageError("tape already replayed; one backward per loss evaluation");
  if (!loss.defined() || loss.node_ptr()->producer != this)
    throw UsageError("backward on a tensor detached from this tape");
  if (loss.numel() != 1) throw DimensionError("backward requires a scalar loss");
  consumed_ = true;
  const_cast<Tensor&>(loss).grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

}  // namespace contilearn
