#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "contilearn/tensor.hpp"

namespace contilearn {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 32;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("sgd: learning_rate must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("sgd: batch_size must be positive");
  }
};

// Named parameters in registration order. Names are unique; the feature
// extractor and the per-task heads live under distinct prefixes.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;
  int64_t total_parameters() const;
  // Fingerprint over all parameter bytes, in registration order.
  uint64_t digest() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// theta <- theta - lr * (grad + weight_decay * theta), through a momentum
// buffer when momentum > 0. Grads are zeroed after the step.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig config);

  void step();
  void zero_grad();
  const SgdConfig& config() const { return config_; }
  void set_learning_rate(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

}  // namespace contilearn
