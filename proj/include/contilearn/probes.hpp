#pragma once

#include <string>
#include <vector>

#include "contilearn/trainers.hpp"

namespace contilearn {

enum class ProbeKind { Knn, Linear, Lpft };
ProbeKind probe_kind_from_string(const std::string& s);
std::string probe_kind_to_string(ProbeKind k);

// 100 log-spaced values spanning [1e-7, 1e2], endpoints included.
std::vector<double> default_reg_grid(int count = 100, double lo_exp = -7.0, double hi_exp = 2.0);

struct ProbeConfig {
  ProbeKind kind = ProbeKind::Knn;
  // knn
  int knn_k = 200;  // capped at |fewshot|
  double knn_temperature = 0.1;
  // linear
  std::vector<double> reg_grid = default_reg_grid();
  // lpft
  int lp_epochs = 25;
  int ft_epochs = 25;
  std::vector<double> lr_grid;  // filled from the training grid by the harness
  int batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 0.0;
  LpSolver lp_solver = LpSolver::Sgd;
  // hyperparameter selection: stratified validation carve-out from the
  // few-shot split by default; test-set selection behind a flag for parity
  // with protocols that pick the best classifier on test.
  bool select_on_test = false;
  double validation_fraction = 0.2;
  uint64_t seed = 1;

  void validate() const;
};

struct TaskProbeResult {
  int task = 0;
  double accuracy = 0.0;
  double hyperparam = 0.0;  // selected reg (linear) or lr (lpft); knn stores k
  bool flagged = false;     // solver did not converge / some grid point discarded
  std::string note;
};

struct ProbeResult {
  ProbeKind kind = ProbeKind::Knn;
  std::vector<TaskProbeResult> per_task;
  uint64_t adapted_digest = 0;  // lpft probe: fingerprint over adapted models

  double average() const;
};

// Per-task probes on the frozen final extractor. None of them may mutate the
// extractor; run_probe verifies this bitwise.
std::vector<int> knn_predict(const FeatureExtractor& fe, const Task& task,
                             const ProbeConfig& config);
double knn_probe_task(const FeatureExtractor& fe, const Task& task, const ProbeConfig& config);
TaskProbeResult linear_probe_task(const FeatureExtractor& fe, const Task& task,
                                  const ProbeConfig& config);
struct LpftProbeTaskOutcome {
  TaskProbeResult result;
  uint64_t adapted_theta_digest = 0;
  uint64_t adapted_head_digest = 0;
};
LpftProbeTaskOutcome lpft_probe_task(const FeatureExtractor& fe, const Task& task,
                                     const ProbeConfig& config);

ProbeResult run_probe(const FeatureExtractor& fe, const TaskStream& stream,
                      const ProbeConfig& config);

// Highest average accuracy wins; ties go to the cheaper probe (knn < linear
// < lpft).
const ProbeResult& best_probe(const std::vector<ProbeResult>& results);

}  // namespace contilearn
