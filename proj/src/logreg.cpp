#include "contilearn/logreg.hpp"

#include <algorithm>
#include <cmath>

namespace contilearn {

double LogisticModel::weight_norm() const {
  double s = 0.0;
  const size_t wn = static_cast<size_t>(dim) * classes;
  for (size_t i = 0; i < wn; ++i) s += params[i] * params[i];
  return std::sqrt(s);
}

std::vector<double> LogisticModel::logits_row(const double* x) const {
  // accumulate x.W in feature order, bias last: bit-identical to the
  // matmul + add_bias evaluation path
  std::vector<double> out(static_cast<size_t>(classes), 0.0);
  const double* w = weights();
  const double* b = bias();
  for (int d = 0; d < dim; ++d) {
    const double xv = x[d];
    const double* wrow = w + static_cast<size_t>(d) * classes;
    for (int c = 0; c < classes; ++c) out[static_cast<size_t>(c)] += xv * wrow[c];
  }
  for (int c = 0; c < classes; ++c) out[static_cast<size_t>(c)] += b[c];
  return out;
}

std::vector<int> LogisticModel::predict(const Tensor& features) const {
  const int64_t n = features.dim(0);
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto logits = logits_row(features.data().data() + i * dim);
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)]) best = c;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

double LogisticModel::accuracy(const Tensor& features, const std::vector<int>& labels) const {
  const auto pred = predict(features);
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double logistic_objective(const Tensor& features, const std::vector<int>& labels, int classes,
                          double l2_reg, const std::vector<double>& params,
                          std::vector<double>* grad_out) {
  const int64_t n = features.dim(0);
  const int64_t dim = features.dim(1);
  const size_t wn = static_cast<size_t>(dim) * classes;
  const double* w = params.data();
  const double* b = params.data() + wn;
  const double inv_n = 1.0 / static_cast<double>(n);

  if (grad_out) grad_out->assign(params.size(), 0.0);
  double loss = 0.0;
  std::vector<double> logits(static_cast<size_t>(classes));
  for (int64_t i = 0; i < n; ++i) {
    const double* x = features.data().data() + i * dim;
    std::fill(logits.begin(), logits.end(), 0.0);
    for (int64_t d = 0; d < dim; ++d) {
      const double xv = x[d];
      const double* wrow = w + static_cast<size_t>(d) * classes;
      for (int c = 0; c < classes; ++c) logits[static_cast<size_t>(c)] += xv * wrow[c];
    }
    for (int c = 0; c < classes; ++c) logits[static_cast<size_t>(c)] += b[c];
    double mx = logits[0];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[static_cast<size_t>(c)]);
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      logits[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
      denom += logits[static_cast<size_t>(c)];
    }
    const int y = labels[static_cast<size_t>(i)];
    loss -= std::log(logits[static_cast<size_t>(y)] / denom);
    if (grad_out) {
      auto& g = *grad_out;
      for (int c = 0; c < classes; ++c) {
        const double p = logits[static_cast<size_t>(c)] / denom;
        const double delta = (p - (c == y ? 1.0 : 0.0)) * inv_n;
        g[wn + static_cast<size_t>(c)] += delta;
        for (int64_t d = 0; d < dim; ++d) g[static_cast<size_t>(d) * classes + static_cast<size_t>(c)] += delta * x[d];
      }
    }
  }
  loss *= inv_n;

  double reg = 0.0;
  for (size_t i = 0; i < wn; ++i) reg += w[i] * w[i];
  loss += 0.5 * l2_reg * reg;
  if (grad_out) {
    auto& g = *grad_out;
    for (size_t i = 0; i < wn; ++i) g[i] += l2_reg * w[i];
  }
  return loss;
}

LogisticFit fit_logistic(const Tensor& features, const std::vector<int>& labels, int classes,
                         double l2_reg, const LbfgsOptions& opts) {
  if (features.ndim() != 2) throw DimensionError("fit_logistic: features must be a matrix");
  if (static_cast<int64_t>(labels.size()) != features.dim(0))
    throw DimensionError("fit_logistic: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= classes) throw DataError("fit_logistic: label out of range");

  const int64_t dim = features.dim(1);
  std::vector<double> x0(static_cast<size_t>(dim) * classes + classes, 0.0);
  auto objective = [&](const std::vector<double>& p, std::vector<double>& grad) {
    return logistic_objective(features, labels, classes, l2_reg, p, &grad);
  };
  LbfgsResult r = lbfgs_minimize(objective, std::move(x0), opts);

  LogisticFit fit;
  fit.model.dim = static_cast<int>(dim);
  fit.model.classes = classes;
  fit.model.params = std::move(r.x);
  fit.objective = r.objective;
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  return fit;
}

}  // namespace contilearn
