#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "contilearn/data.hpp"
#include "contilearn/model.hpp"

namespace contilearn {

enum class Method { Sgd, Lpft, Si, Der, SiLpft, DerLpft };
enum class CheckpointStrategy { Last, BestAvg };
enum class LpSolver { Sgd, Lbfgs };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);
bool method_has_lp_phase(Method m);

struct MethodParams {
  double si_c = 1.0;
  double si_xi = 1.0;
  double der_alpha = 0.5;
  int der_capacity = 500;
  LpSolver lp_solver = LpSolver::Sgd;  // "+SK" variant when Lbfgs
};

struct TrainConfig {
  int epochs_per_task = 50;
  int lp_epochs = 25;
  int ft_epochs = 25;
  SgdConfig sgd;
  Method method = Method::Sgd;
  MethodParams method_params;
  CheckpointStrategy checkpoint_strategy = CheckpointStrategy::Last;
  uint64_t seed = 1;

  void validate() const;
};

// Synaptic-intelligence auxiliaries, one slot per feature-extractor parameter
// tensor in registration order. Heads are task-specific and never penalized.
struct SIState {
  double c = 1.0;
  double xi = 1.0;
  std::vector<std::vector<double>> omega;  // running path importance, reset per task
  std::vector<std::shared_ptr<std::vector<double>>> consolidated;  // Omega, >= 0
  std::vector<std::shared_ptr<std::vector<double>>> reference;     // theta* after last task
  int tasks_consolidated = 0;

  static SIState init(const FeatureExtractor& fe, double c, double xi);
  bool active() const { return tasks_consolidated > 0; }
  // Omega += max(omega, 0) / ((theta - theta*)^2 + xi); omega reset; theta* <- theta.
  void consolidate(const FeatureExtractor& fe);
};

// Reservoir buffer of (input row, logits at insertion, task id).
class ReplayBuffer {
 public:
  struct Entry {
    std::vector<double> input;
    std::vector<double> logits;
    int task_id = -1;
  };

  ReplayBuffer() : ReplayBuffer(0, Rng(0)) {}
  ReplayBuffer(int capacity, Rng rng);

  void insert(const double* input, int64_t input_dim, const double* logits, int64_t classes,
              int task_id);
  // Distinct indices, at most count, drawn from the buffer's own stream.
  std::vector<int64_t> sample_indices(int64_t count);
  const std::vector<Entry>& entries() const { return entries_; }
  int capacity() const { return capacity_; }
  uint64_t seen() const { return seen_; }
  int size() const { return static_cast<int>(entries_.size()); }

 private:
  int capacity_ = 0;
  uint64_t seen_ = 0;
  std::vector<Entry> entries_;
  Rng rng_;
};

struct EpochRecord {
  int task = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::string phase;  // "joint", "lp" or "ft"
  uint64_t theta_digest = 0;
};

struct TaskTrainMeta {
  int task = 0;
  int selected_epoch = -1;
  double selected_avg_accuracy = 0.0;
  uint64_t theta_digest = 0;
  // LP-phase contract fingerprints (LP-FT style methods only)
  bool has_lp_phase = false;
  uint64_t lp_theta_before = 0;
  uint64_t lp_theta_after = 0;
  double lp_final_fullbatch_loss = 0.0;
  double ft_initial_fullbatch_loss = 0.0;
  bool lp_solver_fallback = false;  // quasi-Newton head fit did not converge
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<TaskTrainMeta> tasks;
  double wall_seconds = 0.0;

  std::string to_jsonl() const;
  void write_jsonl(const std::string& path) const;
};

struct TrainResult {
  FeatureExtractor fe;
  HeadRegistry heads;
  TrainLog log;
};

// Single-task trainers (the per-task building blocks of train_stream). The
// head must be freshly initialized for the task.
void train_task_sgd(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& config,
                    TrainLog* log = nullptr);
void train_task_lpft(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& config,
                     TrainLog* log = nullptr);
void train_task_si(FeatureExtractor& fe, Head& head, const Task& task, SIState& si,
                   const TrainConfig& config, TrainLog* log = nullptr);
void train_task_der(FeatureExtractor& fe, Head& head, const Task& task, ReplayBuffer& buffer,
                    const TrainConfig& config, TrainLog* log = nullptr);

// Sequential training over the whole stream with the configured method and
// checkpoint strategy.
TrainResult train_stream(const TaskStream& stream, const ModelConfig& model_config,
                         const TrainConfig& config);

// Argmax of eval over the history; ties break toward the later entry.
Checkpoint select_checkpoint(const std::vector<Checkpoint>& history,
                             const std::function<double(const Checkpoint&)>& eval);

// Minimal seeded SGD adaptation loop (plain cross-entropy, no method terms);
// used by the evaluation-time probes.
void sgd_adapt(FeatureExtractor& fe, Head& head, const Tensor& inputs,
               const std::vector<int>& labels, int epochs, bool head_only, const SgdConfig& sgd,
               Rng& shuffle_rng);

double dataset_accuracy(const FeatureExtractor& fe, const Head& head, const Task& task,
                        const LabeledDataset& data);
double average_accuracy_up_to(const FeatureExtractor& fe, const HeadRegistry& heads,
                              const TaskStream& stream, int last_task);
double fullbatch_loss(const FeatureExtractor& fe, const Head& head, const Task& task,
                      const LabeledDataset& data);

}  // namespace contilearn
