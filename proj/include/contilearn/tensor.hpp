#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "contilearn/common.hpp"

namespace contilearn {

class Tape;

namespace detail {
struct TensorNode {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const Tape* producer = nullptr;  // tape whose op created this node, null for leaves
};
}  // namespace detail

// Dense float64 tensor; a cheap handle sharing storage with its copies.
// Scalars use an empty shape and hold exactly one element.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const { return node().shape; }
  int ndim() const { return static_cast<int>(node().shape.size()); }
  int64_t dim(int i) const { return node().shape.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(node().data.size()); }
  int64_t rows() const;
  int64_t cols() const;

  std::vector<double>& data() { return node().data; }
  const std::vector<double>& data() const { return node().data; }
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;
  double scalar_value() const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool v) { node().requires_grad = v; }

  bool has_grad() const { return !node().grad.empty(); }
  // Gradient buffer, allocated (zero-filled) on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Deep copy of data and flags; grad is not copied.
  Tensor clone() const;
  // FNV-1a over the raw data bytes; bitwise state fingerprint.
  uint64_t digest() const;

  detail::TensorNode* node_ptr() const { return node_.get(); }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  detail::TensorNode& node() {
    if (!node_) throw UsageError("operation on undefined tensor");
    return *node_;
  }
  const detail::TensorNode& node() const {
    if (!node_) throw UsageError("operation on undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of executed ops. Ops append themselves during the forward
// pass, so the record is topologically ordered by construction; backward()
// replays it in reverse exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Called by ops: fresh output node owned by this tape.
  Tensor make_output(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad);
  void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse, accumulating
  // gradients into every node that requires them.
  void backward(const Tensor& loss);

  size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
void check_finite(const std::vector<double>& values, const char* what);

}  // namespace contilearn
