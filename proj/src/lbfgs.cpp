#include "contilearn/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace contilearn {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

LbfgsResult lbfgs_minimize(const LbfgsObjective& fn, std::vector<double> x0,
                           const LbfgsOptions& opts) {
  const size_t n = x0.size();
  std::vector<double> x = std::move(x0);
  std::vector<double> grad(n, 0.0);
  double f = fn(x, grad);

  LbfgsResult best;
  best.x = x;
  best.objective = f;
  best.grad_norm = norm2(grad);

  std::deque<std::pair<std::vector<double>, std::vector<double>>> pairs;  // (s, y)
  std::vector<double> direction(n), x_new(n), grad_new(n, 0.0), alpha_buf;

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    const double gnorm = norm2(grad);
    if (gnorm <= opts.grad_tolerance) {
      best.x = x;
      best.objective = f;
      best.grad_norm = gnorm;
      best.iterations = iter;
      best.converged = true;
      return best;
    }

    // two-loop recursion for d = -H * grad
    direction = grad;
    alpha_buf.assign(pairs.size(), 0.0);
    for (size_t i = pairs.size(); i-- > 0;) {
      const auto& [s, y] = pairs[i];
      const double rho = 1.0 / dot(y, s);
      alpha_buf[i] = rho * dot(s, direction);
      for (size_t j = 0; j < n; ++j) direction[j] -= alpha_buf[i] * y[j];
    }
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      const double gamma = dot(s, y) / dot(y, y);
      for (auto& d : direction) d *= gamma;
    }
    for (size_t i = 0; i < pairs.size(); ++i) {
      const auto& [s, y] = pairs[i];
      const double rho = 1.0 / dot(y, s);
      const double beta = rho * dot(y, direction);
      for (size_t j = 0; j < n; ++j) direction[j] += (alpha_buf[i] - beta) * s[j];
    }
    for (auto& d : direction) d = -d;

    double dir_deriv = dot(grad, direction);
    if (dir_deriv >= 0.0) {
      // not a descent direction; restart from steepest descent
      pairs.clear();
      for (size_t j = 0; j < n; ++j) direction[j] = -grad[j];
      dir_deriv = -gnorm * gnorm;
    }

    // Armijo backtracking
    constexpr double kArmijoC1 = 1e-4;
    double step = 1.0;
    double f_new = f;
    bool decreased = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (size_t j = 0; j < n; ++j) x_new[j] = x[j] + step * direction[j];
      std::fill(grad_new.begin(), grad_new.end(), 0.0);
      f_new = fn(x_new, grad_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijoC1 * step * dir_deriv) {
        decreased = true;
        break;
      }
      step *= 0.5;
    }
    if (!decreased) break;  // stuck; report best iterate, converged = false

    std::vector<double> s(n), y(n);
    for (size_t j = 0; j < n; ++j) {
      s[j] = x_new[j] - x[j];
      y[j] = grad_new[j] - grad[j];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12 * norm2(s) * norm2(y)) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(pairs.size()) > opts.history) pairs.pop_front();
    }

    x.swap(x_new);
    grad.swap(grad_new);
    f = f_new;
    if (f < best.objective) {
      best.x = x;
      best.objective = f;
      best.grad_norm = norm2(grad);
    }
  }

  const double gnorm = norm2(grad);
  if (f <= best.objective) {
    best.x = x;
    best.objective = f;
    best.grad_norm = gnorm;
  }
  best.iterations = iter;
  best.converged = gnorm <= opts.grad_tolerance;
  return best;
}

}  // namespace contilearn
