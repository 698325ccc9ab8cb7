#pragma once

#include <map>
#include <string>
#include <vector>

#include "contilearn/ops.hpp"
#include "contilearn/optim.hpp"
#include "contilearn/rng.hpp"

namespace contilearn {

struct ModelConfig {
  int input_dim = 64;
  std::vector<int> hidden_dims = {256, 128};
  int feature_dim = 64;
  int num_groups = 8;
  int classes_per_task = 2;
  uint64_t init_seed = 0;
  double group_norm_eps = 1e-5;

  void validate() const;
  // Closed-form parameter count of the feature extractor.
  int64_t extractor_parameter_count() const;
};

// MLP feature extractor: (dense -> group_norm -> relu) per hidden layer, then
// a final dense projection to the feature space.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  // Weights ~ uniform(+-sqrt(6/(fan_in+fan_out))) from the seeded stream;
  // biases and group-norm betas start at zero, gammas at one.
  static FeatureExtractor init(const ModelConfig& config);
  static FeatureExtractor from_store(const ModelConfig& config, const ParameterStore& store);

  Tensor features(Tape* tape, const Tensor& x) const;

  const ModelConfig& config() const { return config_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }
  std::vector<Tensor> parameter_tensors() const { return params_.tensors(); }
  void set_requires_grad(bool v);
  uint64_t digest() const { return params_.digest(); }
  FeatureExtractor clone() const;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

// Task-specific linear head on top of the feature space.
struct Head {
  int task_id = -1;
  Tensor weights;  // [feature_dim x classes]
  Tensor bias;     // [classes]

  static Head init(int task_id, int feature_dim, int classes, Rng rng);
  std::vector<Tensor> parameter_tensors() const { return {weights, bias}; }
  void set_requires_grad(bool v);
  Head clone() const;
};

class HeadRegistry {
 public:
  void add(Head head);
  bool contains(int task_id) const { return heads_.count(task_id) != 0; }
  Head& get(int task_id);
  const Head& get(int task_id) const;
  const std::map<int, Head>& all() const { return heads_; }
  std::vector<int> task_ids() const {
    std::vector<int> out;
    for (const auto& [tid, h] : heads_) out.push_back(tid);
    return out;
  }
  HeadRegistry clone() const;

 private:
  std::map<int, Head> heads_;
};

Tensor predict(Tape* tape, const FeatureExtractor& fe, const Head& head, const Tensor& x);
// Argmax class per row; ties go to the lowest class index.
std::vector<int> predict_classes(const FeatureExtractor& fe, const Head& head, const Tensor& x);

// Serializable full snapshot: every named parameter plus provenance.
struct Checkpoint {
  ModelConfig model;
  std::string method;
  int task_index = -1;
  uint64_t seed = 0;
  ParameterStore params;

  static Checkpoint capture(const FeatureExtractor& fe, const HeadRegistry& heads,
                            const std::string& method, int task_index, uint64_t seed);
  // Rebuild live model objects from the snapshot.
  FeatureExtractor extractor() const;
  HeadRegistry heads() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace contilearn
