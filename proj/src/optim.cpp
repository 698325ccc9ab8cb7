#include "contilearn/optim.hpp"

#include <cmath>

namespace contilearn {

void ParameterStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  items_.emplace_back(name, std::move(t));
}

Tensor& ParameterStore::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw UsageError("unknown parameter: " + name);
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw UsageError("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t);
  return out;
}

std::vector<Tensor> ParameterStore::tensors_with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : items_)
    if (n.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

int64_t ParameterStore::total_parameters() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

uint64_t ParameterStore::digest() const {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : items_) {
    h = fnv1a64(name, h);
    h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
  }
  return h;
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  velocity_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i)
    velocity_[i].assign(params_[i].data().size(), 0.0);
}

void SgdOptimizer::set_learning_rate(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("sgd: learning_rate must be finite and >= 0");
  config_.learning_rate = lr;
}

void SgdOptimizer::step() {
  const double lr = config_.learning_rate;
  const double mom = config_.momentum;
  const double wd = config_.weight_decay;
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) throw UsageError("sgd step with missing gradient");
    auto& data = p.data();
    auto& grad = p.grad();
    auto& vel = velocity_[i];
    for (size_t j = 0; j < data.size(); ++j) {
      double g = grad[j] + wd * data[j];
      if (mom != 0.0) {
        vel[j] = mom * vel[j] + g;
        g = vel[j];
      }
      data[j] -= lr * g;
    }
    check_finite(data, "sgd step");
    p.zero_grad();
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace contilearn
