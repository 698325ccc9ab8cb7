#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "contilearn/probes.hpp"

namespace contilearn {

struct DataConfig {
  bool synthetic = true;
  SyntheticSpec spec;
  // idx mode; relative paths resolve against CONTILEARN_DATA when set
  std::string train_images, train_labels, test_images, test_labels;
  int idx_num_tasks = 5;
};

enum class LrPolicy { Grid, Fixed };
enum class LrSelect { Mean, LowerBound };

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::vector<ProbeConfig> probes;
  double fewshot_fraction = 0.10;
  std::vector<uint64_t> seeds = {1, 2, 3};
  LrPolicy lr_policy = LrPolicy::Grid;
  double fixed_lr = 0.0125;  // 0.1 * 32/256, the default-batch grid midpoint
  LrSelect lr_select = LrSelect::Mean;
  std::string output_dir;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
// Canonical (key-ordered) echo used for hashing and the config.json copy.
std::string canonical_config_json(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

// The six base learning rates scaled by batch_size / 256.
std::vector<double> lr_grid(int batch_size);

double average_accuracy(const std::vector<double>& values);
// (mean, 1.96 * sample sd / sqrt(n)); half-width 0 for a single value.
std::pair<double, double> aggregate_seeds(const std::vector<double>& values);

struct GridPointOutcome {
  double lr = 0.0;
  std::vector<uint64_t> seeds;
  std::vector<double> per_seed_knn;  // empty entries dropped on failure
  bool failed = false;
  std::string error;
  double mean = 0.0;
  double half_width = 0.0;
};

struct SeedProbeOutcome {
  uint64_t seed = 0;
  ProbeResult result;
};

struct ProbeAggregate {
  ProbeKind kind = ProbeKind::Knn;
  std::vector<SeedProbeOutcome> per_seed;
  std::vector<double> seed_averages;
  double mean = 0.0;
  double half_width = 0.0;
};

struct EvalReport {
  std::string method;
  std::string code_version;
  uint64_t config_hash = 0;
  double selected_lr = 0.0;
  std::string lr_policy;
  std::string lr_selection_metric;
  std::vector<GridPointOutcome> grid;
  std::vector<ProbeAggregate> probes;
  std::string best_probe_kind;
  int num_tasks = 0;
  double fewshot_fraction = 0.0;
};

// Trains (grid then selected reruns), probes every final model, writes
// trainlogs, checkpoints, report.json/.csv/.txt under output_dir.
EvalReport run_experiment(const ExperimentConfig& cfg, const std::string& output_dir);

struct SweepRow {
  double fraction = 0.0;
  std::string probe;
  uint64_t seed = 0;
  double average = 0.0;
};

// Train once per seed, then re-probe at each few-shot fraction. Writes
// sweep_fraction.csv (and .json) under output_dir.
std::vector<SweepRow> sweep_fraction(const ExperimentConfig& cfg,
                                     const std::vector<double>& fractions,
                                     const std::string& output_dir);

// Probe a persisted checkpoint under the experiment's data config; the
// checkpoint's recorded seed drives the few-shot draw.
std::vector<ProbeResult> probe_checkpoint_file(const ExperimentConfig& cfg,
                                               const std::string& checkpoint_path,
                                               const std::string& output_dir);

// --- report rendering (report.cpp) ---

struct RankingCell {
  int rank = 0;
  double mean = 0.0;
  double half_width = 0.0;
  std::string best_probe;  // best column only
};

struct RankingTable {
  std::vector<std::string> methods;        // row order
  std::vector<std::string> probe_columns;  // column order
  std::map<std::string, std::map<std::string, RankingCell>> cells;

  std::string to_text() const;
};

RankingTable make_ranking_table(const std::vector<EvalReport>& reports);

void write_report_files(const EvalReport& report, const ExperimentConfig& cfg,
                        const std::string& output_dir);
EvalReport read_report_json(const std::string& path);
// Scan run_dir (and its direct children) for report.json files, build the
// ranking table, write ranking.txt/ranking.json, return the text.
std::string report_run_dir(const std::string& run_dir);

std::string probe_result_json(const ProbeResult& result);

// Build the task stream named by the data config (without few-shot splits).
TaskStream build_stream(const DataConfig& data);

int max_parallel_jobs();

}  // namespace contilearn
