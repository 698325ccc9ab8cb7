#pragma once

#include <vector>

#include "contilearn/lbfgs.hpp"
#include "contilearn/tensor.hpp"

namespace contilearn {

// Multinomial logistic regression over fixed feature vectors. Parameter
// layout: weights [dim x classes] row-major, then bias [classes].
struct LogisticModel {
  int dim = 0;
  int classes = 0;
  std::vector<double> params;

  const double* weights() const { return params.data(); }
  const double* bias() const { return params.data() + static_cast<size_t>(dim) * classes; }
  double weight_norm() const;
  std::vector<double> logits_row(const double* x) const;
  std::vector<int> predict(const Tensor& features) const;
  double accuracy(const Tensor& features, const std::vector<int>& labels) const;
};

struct LogisticFit {
  LogisticModel model;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Objective: mean cross-entropy + 0.5 * l2_reg * ||W||^2 (bias unpenalized).
double logistic_objective(const Tensor& features, const std::vector<int>& labels, int classes,
                          double l2_reg, const std::vector<double>& params,
                          std::vector<double>* grad_out);

// Full-batch quasi-Newton fit from the zero initializer.
LogisticFit fit_logistic(const Tensor& features, const std::vector<int>& labels, int classes,
                         double l2_reg, const LbfgsOptions& opts = {});

}  // namespace contilearn
