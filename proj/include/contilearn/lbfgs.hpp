#pragma once

#include <functional>
#include <vector>

namespace contilearn {

struct LbfgsOptions {
  int max_iterations = 500;
  double grad_tolerance = 1e-6;  // on the euclidean gradient norm
  int history = 10;
};

struct LbfgsResult {
  std::vector<double> x;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Objective callback: fill grad (same length as x) and return f(x).
using LbfgsObjective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
// Returns the best iterate seen; converged is false if the gradient tolerance
// was not reached within max_iterations.
LbfgsResult lbfgs_minimize(const LbfgsObjective& fn, std::vector<double> x0,
                           const LbfgsOptions& opts = {});

}  // namespace contilearn
