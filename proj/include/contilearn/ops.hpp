#pragma once

#include <memory>
#include <vector>

#include "contilearn/tensor.hpp"

namespace contilearn {

// Differentiable ops. Pass a tape to record for backward, or nullptr for a
// pure forward evaluation. An op records itself only when some input requires
// a gradient; every output is checked finite before it is returned.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
// matrix [r x c] plus bias [c], broadcast over rows
Tensor add_bias(Tape* tape, const Tensor& m, const Tensor& bias);
Tensor relu(Tape* tape, const Tensor& x);
// Per-sample, per-group standardization of [batch x features] followed by a
// per-feature affine transform. gamma/beta have length features.
Tensor group_norm(Tape* tape, const Tensor& x, int num_groups, const Tensor& gamma,
                  const Tensor& beta, double eps);
// Mean over the batch of -log softmax(logits)[label], max-stabilized.
Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels);
// Mean over all entries of (a - b)^2.
Tensor mse(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape* tape, const Tensor& x);
// sum_i w[i] * (p[i] - ref[i])^2, with ref and w treated as constants.
Tensor quadratic_penalty(Tape* tape, const Tensor& p,
                         std::shared_ptr<const std::vector<double>> ref,
                         std::shared_ptr<const std::vector<double>> w);
Tensor quadratic_penalty(Tape* tape, const Tensor& p, const std::vector<double>& ref,
                         const std::vector<double>& w);

}  // namespace contilearn
