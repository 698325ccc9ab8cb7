#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "contilearn/data.hpp"
#include "contilearn/ops.hpp"
#include "contilearn/rng.hpp"

namespace testutil {

using namespace contilearn;

// Central finite differences against the analytic backward pass. Error is
// |analytic - numeric| / max(1, |analytic|, |numeric|): relative for O(1)
// gradients, absolute near zero.
inline double fd_max_rel_error(const std::vector<Tensor>& params,
                               const std::function<Tensor(Tape*)>& forward, double eps = 1e-5) {
  Tape tape;
  Tensor loss = forward(&tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& data = p.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double fp = forward(nullptr).scalar_value();
      data[i] = saved - eps;
      const double fm = forward(nullptr).scalar_value();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      worst = std::max(worst, err);
    }
  }
  for (auto p : params) p.zero_grad();
  return worst;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Small well-separated synthetic stream for fast trainer/probe tests.
inline TaskStream tiny_stream(int num_classes = 4, int classes_per_task = 2, int input_dim = 8,
                              int train_per_class = 30, int test_per_class = 20,
                              double separation = 4.0, double noise = 0.5, uint64_t seed = 11,
                              double fewshot_fraction = 0.5, uint64_t fewshot_seed = 21) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.classes_per_task = classes_per_task;
  spec.input_dim = input_dim;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  spec.cluster_separation = separation;
  spec.noise_sigma = noise;
  spec.seed = seed;
  TaskStream stream = make_synthetic_stream(spec);
  apply_fewshot(stream, fewshot_fraction, fewshot_seed);
  return stream;
}

// Unique scratch directory under the build tree.
inline std::string scratch_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("contilearn_test_" + tag + "_" + std::to_string(++counter) +
                                   "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
