#include "contilearn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace contilearn {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

void ExperimentConfig::validate() const {
  if (data.synthetic) {
    data.spec.validate();
  } else {
    if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
        data.test_labels.empty())
      throw ConfigError("config: idx data needs all four file paths");
    if (data.idx_num_tasks < 1) throw ConfigError("config: idx_num_tasks must be positive");
  }
  model.validate();
  train.validate();
  if (!(fewshot_fraction > 0.0) || fewshot_fraction > 1.0)
    throw ConfigError("config: fewshot_fraction must be in (0,1]");
  if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  if (lr_policy == LrPolicy::Fixed && !(fixed_lr > 0.0))
    throw ConfigError("config: fixed_lr must be positive");
  for (const auto& p : probes) {
    ProbeConfig filled = p;
    if (filled.lr_grid.empty()) filled.lr_grid = lr_grid(train.sgd.batch_size);
    filled.validate();
  }
}

std::vector<double> lr_grid(int batch_size) {
  if (batch_size < 1) throw ConfigError("lr_grid: batch_size must be >= 1");
  const double scale = static_cast<double>(batch_size) / 256.0;
  std::vector<double> base = {0.003, 0.01, 0.03, 0.1, 0.3, 1.0};
  for (double& v : base) v *= scale;
  return base;
}

double average_accuracy(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("average_accuracy: empty input");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

std::pair<double, double> aggregate_seeds(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("aggregate_seeds: empty input");
  bool all_equal = true;
  for (double v : values) all_equal = all_equal && v == values.front();
  if (all_equal) return {values.front(), 0.0};  // no summation noise on identical seeds
  const double mean = average_accuracy(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(values.size()))};
}

// ---------------- config parsing ----------------

namespace {

LpSolver lp_solver_from_string(const std::string& s) {
  if (s == "sgd") return LpSolver::Sgd;
  if (s == "lbfgs" || s == "sk") return LpSolver::Lbfgs;
  throw ConfigError("unknown lp_solver: " + s);
}

std::string lp_solver_to_string(LpSolver s) {
  return s == LpSolver::Sgd ? "sgd" : "lbfgs";
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string resolve_data_path(const std::string& path) {
  if (path.empty() || path.front() == '/') return path;
  const char* root = std::getenv("CONTILEARN_DATA");
  if (!root || !*root) return path;
  return (fs::path(root) / path).string();
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid json: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("synthetic")) {
        cfg.data.synthetic = true;
        const auto& s = d.at("synthetic");
        maybe(s, "num_classes", cfg.data.spec.num_classes);
        maybe(s, "classes_per_task", cfg.data.spec.classes_per_task);
        maybe(s, "input_dim", cfg.data.spec.input_dim);
        maybe(s, "train_per_class", cfg.data.spec.train_per_class);
        maybe(s, "test_per_class", cfg.data.spec.test_per_class);
        maybe(s, "cluster_separation", cfg.data.spec.cluster_separation);
        maybe(s, "noise_sigma", cfg.data.spec.noise_sigma);
        maybe(s, "seed", cfg.data.spec.seed);
      } else if (d.contains("idx")) {
        cfg.data.synthetic = false;
        const auto& s = d.at("idx");
        maybe(s, "train_images", cfg.data.train_images);
        maybe(s, "train_labels", cfg.data.train_labels);
        maybe(s, "test_images", cfg.data.test_images);
        maybe(s, "test_labels", cfg.data.test_labels);
        maybe(s, "num_tasks", cfg.data.idx_num_tasks);
      } else {
        throw ConfigError("config: data must contain 'synthetic' or 'idx'");
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      maybe(m, "input_dim", cfg.model.input_dim);
      maybe(m, "hidden_dims", cfg.model.hidden_dims);
      maybe(m, "feature_dim", cfg.model.feature_dim);
      maybe(m, "num_groups", cfg.model.num_groups);
      maybe(m, "group_norm_eps", cfg.model.group_norm_eps);
    }
    if (cfg.data.synthetic) {
      cfg.model.input_dim = cfg.data.spec.input_dim;
      cfg.model.classes_per_task = cfg.data.spec.classes_per_task;
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      std::string method = "sgd";
      maybe(t, "method", method);
      cfg.train.method = method_from_string(method);
      maybe(t, "epochs_per_task", cfg.train.epochs_per_task);
      maybe(t, "lp_epochs", cfg.train.lp_epochs);
      maybe(t, "ft_epochs", cfg.train.ft_epochs);
      maybe(t, "batch_size", cfg.train.sgd.batch_size);
      maybe(t, "momentum", cfg.train.sgd.momentum);
      maybe(t, "weight_decay", cfg.train.sgd.weight_decay);
      if (t.contains("checkpoint_strategy")) {
        const std::string s = t.at("checkpoint_strategy").get<std::string>();
        if (s == "last") cfg.train.checkpoint_strategy = CheckpointStrategy::Last;
        else if (s == "best_avg") cfg.train.checkpoint_strategy = CheckpointStrategy::BestAvg;
        else throw ConfigError("config: unknown checkpoint_strategy: " + s);
      }
      if (t.contains("method_params")) {
        const auto& mp = t.at("method_params");
        maybe(mp, "si_c", cfg.train.method_params.si_c);
        maybe(mp, "si_xi", cfg.train.method_params.si_xi);
        maybe(mp, "der_alpha", cfg.train.method_params.der_alpha);
        maybe(mp, "der_capacity", cfg.train.method_params.der_capacity);
        if (mp.contains("lp_solver"))
          cfg.train.method_params.lp_solver =
              lp_solver_from_string(mp.at("lp_solver").get<std::string>());
      }
    }
    if (j.contains("probes")) {
      cfg.probes.clear();
      for (const auto& p : j.at("probes")) {
        ProbeConfig pc;
        pc.kind = probe_kind_from_string(p.at("kind").get<std::string>());
        maybe(p, "knn_k", pc.knn_k);
        maybe(p, "knn_temperature", pc.knn_temperature);
        if (p.contains("reg_grid")) pc.reg_grid = p.at("reg_grid").get<std::vector<double>>();
        maybe(p, "lp_epochs", pc.lp_epochs);
        maybe(p, "ft_epochs", pc.ft_epochs);
        if (p.contains("lr_grid")) pc.lr_grid = p.at("lr_grid").get<std::vector<double>>();
        maybe(p, "select_on_test", pc.select_on_test);
        maybe(p, "validation_fraction", pc.validation_fraction);
        if (p.contains("lp_solver"))
          pc.lp_solver = lp_solver_from_string(p.at("lp_solver").get<std::string>());
        cfg.probes.push_back(pc);
      }
    } else {
      ProbeConfig knn;
      knn.kind = ProbeKind::Knn;
      ProbeConfig lin;
      lin.kind = ProbeKind::Linear;
      ProbeConfig lpft;
      lpft.kind = ProbeKind::Lpft;
      cfg.probes = {knn, lin, lpft};
    }
    maybe(j, "fewshot_fraction", cfg.fewshot_fraction);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("lr_policy")) {
      const std::string s = j.at("lr_policy").get<std::string>();
      if (s == "grid") cfg.lr_policy = LrPolicy::Grid;
      else if (s == "fixed") cfg.lr_policy = LrPolicy::Fixed;
      else throw ConfigError("config: unknown lr_policy: " + s);
    }
    maybe(j, "fixed_lr", cfg.fixed_lr);
    if (j.contains("lr_select")) {
      const std::string s = j.at("lr_select").get<std::string>();
      if (s == "mean") cfg.lr_select = LrSelect::Mean;
      else if (s == "lower_bound") cfg.lr_select = LrSelect::LowerBound;
      else throw ConfigError("config: unknown lr_select: " + s);
    }
    maybe(j, "output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text);
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  ordered_json data;
  if (cfg.data.synthetic) {
    ordered_json s;
    s["num_classes"] = cfg.data.spec.num_classes;
    s["classes_per_task"] = cfg.data.spec.classes_per_task;
    s["input_dim"] = cfg.data.spec.input_dim;
    s["train_per_class"] = cfg.data.spec.train_per_class;
    s["test_per_class"] = cfg.data.spec.test_per_class;
    s["cluster_separation"] = cfg.data.spec.cluster_separation;
    s["noise_sigma"] = cfg.data.spec.noise_sigma;
    s["seed"] = cfg.data.spec.seed;
    data["synthetic"] = s;
  } else {
    ordered_json s;
    s["train_images"] = cfg.data.train_images;
    s["train_labels"] = cfg.data.train_labels;
    s["test_images"] = cfg.data.test_images;
    s["test_labels"] = cfg.data.test_labels;
    s["num_tasks"] = cfg.data.idx_num_tasks;
    data["idx"] = s;
  }
  j["data"] = data;
  ordered_json m;
  m["input_dim"] = cfg.model.input_dim;
  m["hidden_dims"] = cfg.model.hidden_dims;
  m["feature_dim"] = cfg.model.feature_dim;
  m["num_groups"] = cfg.model.num_groups;
  m["group_norm_eps"] = cfg.model.group_norm_eps;
  m["classes_per_task"] = cfg.model.classes_per_task;
  j["model"] = m;
  ordered_json t;
  t["method"] = method_to_string(cfg.train.method);
  t["epochs_per_task"] = cfg.train.epochs_per_task;
  t["lp_epochs"] = cfg.train.lp_epochs;
  t["ft_epochs"] = cfg.train.ft_epochs;
  t["batch_size"] = cfg.train.sgd.batch_size;
  t["momentum"] = cfg.train.sgd.momentum;
  t["weight_decay"] = cfg.train.sgd.weight_decay;
  t["checkpoint_strategy"] =
      cfg.train.checkpoint_strategy == CheckpointStrategy::Last ? "last" : "best_avg";
  ordered_json mp;
  mp["si_c"] = cfg.train.method_params.si_c;
  mp["si_xi"] = cfg.train.method_params.si_xi;
  mp["der_alpha"] = cfg.train.method_params.der_alpha;
  mp["der_capacity"] = cfg.train.method_params.der_capacity;
  mp["lp_solver"] = lp_solver_to_string(cfg.train.method_params.lp_solver);
  t["method_params"] = mp;
  j["train"] = t;
  ordered_json probes = ordered_json::array();
  for (const auto& p : cfg.probes) {
    ordered_json pj;
    pj["kind"] = probe_kind_to_string(p.kind);
    switch (p.kind) {
      case ProbeKind::Knn:
        pj["knn_k"] = p.knn_k;
        pj["knn_temperature"] = p.knn_temperature;
        break;
      case ProbeKind::Linear:
        pj["reg_grid_size"] = p.reg_grid.size();
        pj["reg_min"] = p.reg_grid.front();
        pj["reg_max"] = p.reg_grid.back();
        break;
      case ProbeKind::Lpft:
        pj["lp_epochs"] = p.lp_epochs;
        pj["ft_epochs"] = p.ft_epochs;
        pj["lp_solver"] = lp_solver_to_string(p.lp_solver);
        break;
    }
    pj["select_on_test"] = p.select_on_test;
    pj["validation_fraction"] = p.validation_fraction;
    probes.push_back(pj);
  }
  j["probes"] = probes;
  j["fewshot_fraction"] = cfg.fewshot_fraction;
  j["seeds"] = cfg.seeds;
  j["lr_policy"] = cfg.lr_policy == LrPolicy::Grid ? "grid" : "fixed";
  j["fixed_lr"] = cfg.fixed_lr;
  j["lr_select"] = cfg.lr_select == LrSelect::Mean ? "mean" : "lower_bound";
  return j.dump(2) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(canonical_config_json(cfg)); }

// ---------------- stream construction ----------------

TaskStream build_stream(const DataConfig& data) {
  if (data.synthetic) return make_synthetic_stream(data.spec);
  LabeledDataset train =
      load_idx(resolve_data_path(data.train_images), resolve_data_path(data.train_labels));
  LabeledDataset test =
      load_idx(resolve_data_path(data.test_images), resolve_data_path(data.test_labels));
  return make_split_stream(train, test, data.idx_num_tasks);
}

int max_parallel_jobs() {
  if (const char* env = std::getenv("CONTILEARN_JOBS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

void parallel_run(int total, const std::function<void(int)>& fn) {
  const int jobs = std::min(max_parallel_jobs(), total);
  if (jobs <= 1) {
    for (int i = 0; i < total; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= total) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

ProbeConfig materialize_probe(const ProbeConfig& base, const ExperimentConfig& cfg,
                              uint64_t seed) {
  ProbeConfig p = base;
  p.seed = seed;
  p.batch_size = cfg.train.sgd.batch_size;
  p.momentum = cfg.train.sgd.momentum;
  p.weight_decay = cfg.train.sgd.weight_decay;
  if (p.lr_grid.empty()) p.lr_grid = lr_grid(cfg.train.sgd.batch_size);
  return p;
}

ProbeConfig knn_probe_config(const ExperimentConfig& cfg, uint64_t seed) {
  for (const auto& p : cfg.probes)
    if (p.kind == ProbeKind::Knn) return materialize_probe(p, cfg, seed);
  ProbeConfig knn;
  knn.kind = ProbeKind::Knn;
  return materialize_probe(knn, cfg, seed);
}

struct SingleRun {
  TrainResult result;
  TaskStream stream;  // with this run's few-shot splits applied
};

SingleRun execute_run(const ExperimentConfig& cfg, const TaskStream& base_stream, double lr,
                      uint64_t seed) {
  SingleRun run;
  run.stream = base_stream;  // tensors shared; few-shot splits are per run
  apply_fewshot(run.stream, cfg.fewshot_fraction, seed);
  ModelConfig mc = cfg.model;
  mc.init_seed = seed;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.sgd.learning_rate = lr;
  run.result = train_stream(run.stream, mc, tc);
  return run;
}

std::string grid_dir_name(size_t lr_index) { return "lr" + std::to_string(lr_index); }

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg, const std::string& output_dir) {
  cfg.validate();
  fs::create_directories(output_dir);
  {
    std::ofstream f(fs::path(output_dir) / "config.json", std::ios::trunc);
    if (!f) throw IoError("cannot write config echo: " + output_dir);
    f << canonical_config_json(cfg);
  }

  const TaskStream base_stream = build_stream(cfg.data);
  if (base_stream.tasks.front().train.inputs.dim(1) != cfg.model.input_dim)
    throw ConfigError("config: model input_dim does not match the data");

  EvalReport report;
  report.method = method_to_string(cfg.train.method);
  report.code_version = kVersion;
  report.config_hash = config_hash(cfg);
  report.lr_policy = cfg.lr_policy == LrPolicy::Grid ? "grid" : "fixed";
  report.num_tasks = base_stream.num_tasks();
  report.fewshot_fraction = cfg.fewshot_fraction;

  double selected_lr = cfg.fixed_lr;
  if (cfg.lr_policy == LrPolicy::Grid) {
    const auto grid = lr_grid(cfg.train.sgd.batch_size);
    const auto n_seeds = cfg.seeds.size();
    struct Cell {
      double knn = 0.0;
      bool failed = false;
      std::string error;
    };
    std::vector<Cell> cells(grid.size() * n_seeds);
    parallel_run(static_cast<int>(cells.size()), [&](int idx) {
      const size_t li = static_cast<size_t>(idx) / n_seeds;
      const size_t si = static_cast<size_t>(idx) % n_seeds;
      const uint64_t seed = cfg.seeds[si];
      Cell& cell = cells[static_cast<size_t>(idx)];
      const fs::path dir = fs::path(output_dir) / "grid" / grid_dir_name(li) /
                           ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      try {
        SingleRun run = execute_run(cfg, base_stream, grid[li], seed);
        run.result.log.write_jsonl((dir / "trainlog.jsonl").string());
        const ProbeResult knn =
            run_probe(run.result.fe, run.stream, knn_probe_config(cfg, seed));
        cell.knn = knn.average();
        std::ofstream f(dir / "knn.json", std::ios::trunc);
        f << probe_result_json(knn);
      } catch (const TrainingError& e) {
        cell.failed = true;
        cell.error = e.what();
      } catch (const NumericError& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    });

    double best_score = -1.0;
    bool any_ok = false;
    for (size_t li = 0; li < grid.size(); ++li) {
      GridPointOutcome point;
      point.lr = grid[li];
      for (size_t si = 0; si < n_seeds; ++si) {
        const Cell& cell = cells[li * n_seeds + si];
        point.seeds.push_back(cfg.seeds[si]);
        if (cell.failed) {
          point.failed = true;
          point.error += point.error.empty() ? "" : "; ";
          point.error += "seed " + std::to_string(cfg.seeds[si]) + ": " + cell.error;
        } else {
          point.per_seed_knn.push_back(cell.knn);
        }
      }
      if (!point.failed) {
        const auto [mean, hw] = aggregate_seeds(point.per_seed_knn);
        point.mean = mean;
        point.half_width = hw;
        const double score = cfg.lr_select == LrSelect::Mean ? mean : mean - hw;
        if (score > best_score) {
          best_score = score;
          selected_lr = point.lr;
        }
        any_ok = true;
      }
      report.grid.push_back(std::move(point));
    }
    if (!any_ok) throw TrainingError("every learning-rate grid point failed", -1, -1);
    report.lr_selection_metric =
        cfg.lr_select == LrSelect::Mean ? "knn-mean" : "knn-lower-bound";

    ordered_json gj = ordered_json::array();
    for (const auto& p : report.grid) {
      ordered_json pj;
      pj["lr"] = p.lr;
      pj["status"] = p.failed ? "failed" : "ok";
      if (p.failed) pj["error"] = p.error;
      pj["seeds"] = p.seeds;
      pj["per_seed_knn"] = p.per_seed_knn;
      if (!p.failed) {
        pj["mean"] = p.mean;
        pj["half_width"] = p.half_width;
      }
      gj.push_back(pj);
    }
    std::ofstream f(fs::path(output_dir) / "grid.json", std::ios::trunc);
    f << gj.dump(2) << "\n";
  } else {
    report.lr_selection_metric = "fixed";
  }
  report.selected_lr = selected_lr;

  // rerun the selected configuration for every seed, with full probing
  const auto n_seeds = cfg.seeds.size();
  std::vector<std::vector<SeedProbeOutcome>> probe_rows(cfg.probes.size());
  for (auto& row : probe_rows) row.resize(n_seeds);
  std::vector<std::string> run_errors(n_seeds);
  parallel_run(static_cast<int>(n_seeds), [&](int si) {
    const uint64_t seed = cfg.seeds[static_cast<size_t>(si)];
    const fs::path dir = fs::path(output_dir) / "selected" / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    try {
      SingleRun run = execute_run(cfg, base_stream, selected_lr, seed);
      run.result.log.write_jsonl((dir / "trainlog.jsonl").string());
      const Checkpoint ckpt =
          Checkpoint::capture(run.result.fe, run.result.heads, method_to_string(cfg.train.method),
                              base_stream.num_tasks() - 1, seed);
      save_checkpoint(ckpt, (dir / "final.ckpt").string());
      for (size_t pi = 0; pi < cfg.probes.size(); ++pi) {
        const ProbeConfig pc = materialize_probe(cfg.probes[pi], cfg, seed);
        ProbeResult pr = run_probe(run.result.fe, run.stream, pc);
        std::ofstream f(dir / ("probe_" + probe_kind_to_string(pc.kind) + ".json"),
                        std::ios::trunc);
        f << probe_result_json(pr);
        probe_rows[pi][static_cast<size_t>(si)] = {seed, std::move(pr)};
      }
    } catch (const std::exception& e) {
      run_errors[static_cast<size_t>(si)] = e.what();
    }
  });
  for (size_t si = 0; si < n_seeds; ++si) {
    if (!run_errors[si].empty())
      throw TrainingError("selected run failed for seed " + std::to_string(cfg.seeds[si]) + ": " +
                              run_errors[si],
                          -1, -1);
  }

  std::vector<ProbeResult> probe_results_for_best;
  for (size_t pi = 0; pi < cfg.probes.size(); ++pi) {
    ProbeAggregate agg;
    agg.kind = cfg.probes[pi].kind;
    for (size_t si = 0; si < n_seeds; ++si) {
      agg.per_seed.push_back(probe_rows[pi][si]);
      agg.seed_averages.push_back(probe_rows[pi][si].result.average());
    }
    const auto [mean, hw] = aggregate_seeds(agg.seed_averages);
    agg.mean = mean;
    agg.half_width = hw;
    report.probes.push_back(agg);

    // mean-over-seeds view feeds best-probe selection
    ProbeResult pooled;
    pooled.kind = agg.kind;
    TaskProbeResult mean_entry;
    mean_entry.task = 0;
    mean_entry.accuracy = mean;
    pooled.per_task.push_back(mean_entry);
    probe_results_for_best.push_back(pooled);
  }
  if (!probe_results_for_best.empty())
    report.best_probe_kind = probe_kind_to_string(best_probe(probe_results_for_best).kind);

  write_report_files(report, cfg, output_dir);
  return report;
}

std::vector<SweepRow> sweep_fraction(const ExperimentConfig& cfg,
                                     const std::vector<double>& fractions,
                                     const std::string& output_dir) {
  cfg.validate();
  if (fractions.empty()) throw ConfigError("sweep-fraction: no fractions given");
  for (double f : fractions)
    if (!(f > 0.0) || f > 1.0) throw ConfigError("sweep-fraction: fractions must be in (0,1]");
  fs::create_directories(output_dir);

  const TaskStream base_stream = build_stream(cfg.data);
  const double lr = cfg.lr_policy == LrPolicy::Fixed ? cfg.fixed_lr : [&] {
    // reuse the grid protocol to pin the rate, then sweep fractions at it
    ExperimentConfig grid_cfg = cfg;
    const EvalReport r = run_experiment(grid_cfg, (fs::path(output_dir) / "lr_selection").string());
    return r.selected_lr;
  }();

  const auto n_seeds = cfg.seeds.size();
  std::vector<std::vector<SweepRow>> rows_per_seed(n_seeds);
  std::vector<std::string> errors(n_seeds);
  parallel_run(static_cast<int>(n_seeds), [&](int si) {
    const uint64_t seed = cfg.seeds[static_cast<size_t>(si)];
    try {
      TaskStream stream = base_stream;
      apply_fewshot(stream, cfg.fewshot_fraction, seed);
      ModelConfig mc = cfg.model;
      mc.init_seed = seed;
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      tc.sgd.learning_rate = lr;
      TrainResult result = train_stream(stream, mc, tc);
      for (double fraction : fractions) {
        TaskStream probe_stream = base_stream;
        apply_fewshot(probe_stream, fraction, seed);
        for (const auto& probe : cfg.probes) {
          const ProbeConfig pc = materialize_probe(probe, cfg, seed);
          const ProbeResult pr = run_probe(result.fe, probe_stream, pc);
          rows_per_seed[static_cast<size_t>(si)].push_back(
              {fraction, probe_kind_to_string(pc.kind), seed, pr.average()});
        }
      }
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(si)] = e.what();
    }
  });
  for (size_t si = 0; si < n_seeds; ++si)
    if (!errors[si].empty())
      throw TrainingError("sweep run failed for seed " + std::to_string(cfg.seeds[si]) + ": " +
                              errors[si],
                          -1, -1);

  std::vector<SweepRow> rows;
  for (const auto& seed_rows : rows_per_seed)
    rows.insert(rows.end(), seed_rows.begin(), seed_rows.end());
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.fraction != b.fraction) return a.fraction < b.fraction;
    if (a.probe != b.probe) return a.probe < b.probe;
    return a.seed < b.seed;
  });

  {
    std::ofstream f(fs::path(output_dir) / "sweep_fraction.csv", std::ios::trunc);
    if (!f) throw IoError("cannot write sweep csv: " + output_dir);
    f << "fraction,probe,seed,average_accuracy\n";
    for (const auto& r : rows) {
      ordered_json frac = r.fraction;  // shortest round-trip float formatting
      ordered_json avg = r.average;
      f << frac.dump() << "," << r.probe << "," << r.seed << "," << avg.dump() << "\n";
    }
  }
  {
    ordered_json j = ordered_json::array();
    for (const auto& r : rows) {
      ordered_json row;
      row["fraction"] = r.fraction;
      row["probe"] = r.probe;
      row["seed"] = r.seed;
      row["average_accuracy"] = r.average;
      j.push_back(row);
    }
    std::ofstream f(fs::path(output_dir) / "sweep_fraction.json", std::ios::trunc);
    f << j.dump(2) << "\n";
  }
  return rows;
}

std::vector<ProbeResult> probe_checkpoint_file(const ExperimentConfig& cfg,
                                               const std::string& checkpoint_path,
                                               const std::string& output_dir) {
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const FeatureExtractor fe = ckpt.extractor();
  TaskStream stream = build_stream(cfg.data);
  apply_fewshot(stream, cfg.fewshot_fraction, ckpt.seed);
  fs::create_directories(output_dir);
  std::vector<ProbeResult> results;
  for (const auto& probe : cfg.probes) {
    const ProbeConfig pc = materialize_probe(probe, cfg, ckpt.seed);
    ProbeResult pr = run_probe(fe, stream, pc);
    std::ofstream f(fs::path(output_dir) / ("probe_" + probe_kind_to_string(pc.kind) + ".json"),
                    std::ios::trunc);
    if (!f) throw IoError("cannot write probe report: " + output_dir);
    f << probe_result_json(pr);
    results.push_back(std::move(pr));
  }
  return results;
}

}  // namespace contilearn
