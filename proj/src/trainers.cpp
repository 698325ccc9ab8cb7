#include "contilearn/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "contilearn/logreg.hpp"
#include "json.hpp"

namespace contilearn {

using ordered_json = nlohmann::ordered_json;

Method method_from_string(const std::string& s) {
  if (s == "sgd") return Method::Sgd;
  if (s == "lpft") return Method::Lpft;
  if (s == "si") return Method::Si;
  if (s == "der") return Method::Der;
  if (s == "si+lpft") return Method::SiLpft;
  if (s == "der+lpft") return Method::DerLpft;
  throw ConfigError("unknown method: " + s);
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::Sgd: return "sgd";
    case Method::Lpft: return "lpft";
    case Method::Si: return "si";
    case Method::Der: return "der";
    case Method::SiLpft: return "si+lpft";
    case Method::DerLpft: return "der+lpft";
  }
  throw UsageError("bad method enum");
}

bool method_has_lp_phase(Method m) {
  return m == Method::Lpft || m == Method::SiLpft || m == Method::DerLpft;
}

void TrainConfig::validate() const {
  if (epochs_per_task < 0 || lp_epochs < 0 || ft_epochs < 0)
    throw ConfigError("train: epoch counts must be >= 0");
  sgd.validate();
  if (method_params.si_xi <= 0.0) throw ConfigError("train: si_xi must be positive");
  if (method_params.si_c < 0.0) throw ConfigError("train: si_c must be >= 0");
  if (method_params.der_alpha < 0.0) throw ConfigError("train: der_alpha must be >= 0");
  if (method_params.der_capacity < 0) throw ConfigError("train: der_capacity must be >= 0");
}

SIState SIState::init(const FeatureExtractor& fe, double c, double xi) {
  if (xi <= 0.0) throw ConfigError("si: xi must be positive");
  SIState s;
  s.c = c;
  s.xi = xi;
  for (const auto& t : fe.parameter_tensors()) {
    const size_t n = t.data().size();
    s.omega.emplace_back(n, 0.0);
    s.consolidated.push_back(std::make_shared<std::vector<double>>(n, 0.0));
    s.reference.push_back(std::make_shared<std::vector<double>>(t.data()));
  }
  return s;
}

void SIState::consolidate(const FeatureExtractor& fe) {
  const auto tensors = fe.parameter_tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& theta = tensors[i].data();
    const auto& ref = *reference[i];
    auto next = std::make_shared<std::vector<double>>(*consolidated[i]);
    for (size_t j = 0; j < theta.size(); ++j) {
      const double delta = theta[j] - ref[j];
      // clamped at zero so Omega stays entrywise nonnegative
      (*next)[j] += std::max(0.0, omega[i][j]) / (delta * delta + xi);
      if (!std::isfinite((*next)[j])) throw NumericError("si: non-finite importance");
    }
    consolidated[i] = std::move(next);
    reference[i] = std::make_shared<std::vector<double>>(theta);
    std::fill(omega[i].begin(), omega[i].end(), 0.0);
  }
  ++tasks_consolidated;
}

ReplayBuffer::ReplayBuffer(int capacity, Rng rng) : capacity_(capacity), rng_(rng) {
  if (capacity < 0) throw ConfigError("replay buffer: capacity must be >= 0");
}

void ReplayBuffer::insert(const double* input, int64_t input_dim, const double* logits,
                          int64_t classes, int task_id) {
  ++seen_;
  if (capacity_ == 0) return;  // degenerate buffer consumes no randomness
  Entry e;
  e.input.assign(input, input + input_dim);
  e.logits.assign(logits, logits + classes);
  e.task_id = task_id;
  if (static_cast<int>(entries_.size()) < capacity_) {
    entries_.push_back(std::move(e));
    return;
  }
  const uint64_t j = rng_.uniform_int(seen_);
  if (j < static_cast<uint64_t>(capacity_)) entries_[static_cast<size_t>(j)] = std::move(e);
}

std::vector<int64_t> ReplayBuffer::sample_indices(int64_t count) {
  const auto n = static_cast<int64_t>(entries_.size());
  return rng_.sample_without_replacement(n, std::min(count, n));
}

namespace {

struct PhaseSpec {
  const char* name = "joint";
  int epochs = 0;
  int epoch_offset = 0;
  bool head_only = false;
  SIState* si = nullptr;
  ReplayBuffer* buffer = nullptr;
  double der_alpha = 0.0;
  const HeadRegistry* replay_heads = nullptr;
};

using EpochHook = std::function<void(int)>;

void run_phase(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& cfg,
               Rng& shuffle_rng, const PhaseSpec& spec, TrainLog* log, const EpochHook& hook) {
  const int64_t n = task.train.size();
  const auto labels_local = task.local_labels(task.train);
  const int64_t classes = task.num_classes();
  const int64_t batch = std::max<int64_t>(1, cfg.sgd.batch_size);

  std::vector<Tensor> opt_params = head.parameter_tensors();
  std::vector<Tensor> fe_tensors = fe.parameter_tensors();
  if (!spec.head_only)
    opt_params.insert(opt_params.begin(), fe_tensors.begin(), fe_tensors.end());
  SgdOptimizer opt(opt_params, cfg.sgd);
  opt.zero_grad();

  const bool si_on = spec.si != nullptr && !spec.head_only;
  const bool penalty_on = si_on && spec.si->active() && spec.si->c != 0.0;
  const bool replay_on = spec.buffer != nullptr && !spec.head_only;

  std::vector<std::vector<double>> theta_prev, grad_prev;
  if (si_on) {
    theta_prev.resize(fe_tensors.size());
    grad_prev.resize(fe_tensors.size());
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    try {
      for (int64_t start = 0; start < n; start += batch) {
        const int64_t stop = std::min(n, start + batch);
        const std::vector<int64_t> rows(order.begin() + start, order.begin() + stop);
        Tensor x = gather_rows(task.train.inputs, rows);
        std::vector<int> y = gather(labels_local, rows);

        Tape tape;
        Tensor logits = predict(&tape, fe, head, x);
        Tensor loss = cross_entropy(&tape, logits, y);

        if (penalty_on) {
          Tensor penalty;
          for (size_t i = 0; i < fe_tensors.size(); ++i) {
            Tensor q = quadratic_penalty(&tape, fe_tensors[i], spec.si->reference[i],
                                         spec.si->consolidated[i]);
            penalty = penalty.defined() ? add(&tape, penalty, q) : q;
          }
          loss = add(&tape, loss, scale(&tape, penalty, spec.si->c));
        }

        if (replay_on && spec.der_alpha != 0.0 && spec.buffer->size() > 0) {
          const auto sample = spec.buffer->sample_indices(batch);
          std::map<int, std::vector<int64_t>> groups;
          for (int64_t idx : sample)
            groups[spec.buffer->entries()[static_cast<size_t>(idx)].task_id].push_back(idx);
          Tensor total_sq;
          for (const auto& [tid, members] : groups) {
            const auto m = static_cast<int64_t>(members.size());
            const int64_t d = task.train.inputs.dim(1);
            Tensor bx = Tensor::zeros({m, d});
            Tensor stored = Tensor::zeros({m, classes});
            for (int64_t r = 0; r < m; ++r) {
              const auto& e = spec.buffer->entries()[static_cast<size_t>(members[static_cast<size_t>(r)])];
              std::copy(e.input.begin(), e.input.end(), bx.data().begin() + r * d);
              std::copy(e.logits.begin(), e.logits.end(), stored.data().begin() + r * classes);
            }
            const Head* replay_head = nullptr;
            if (tid == head.task_id) replay_head = &head;
            else if (spec.replay_heads && spec.replay_heads->contains(tid))
              replay_head = &spec.replay_heads->get(tid);
            else
              throw UsageError("replay entry from a task with no registered head");
            Tensor cur = predict(&tape, fe, *replay_head, bx);
            Tensor diff = sub(&tape, cur, stored);
            Tensor sq = sum(&tape, mul(&tape, diff, diff));
            total_sq = total_sq.defined() ? add(&tape, total_sq, sq) : sq;
          }
          Tensor replay_mse = scale(
              &tape, total_sq,
              1.0 / (static_cast<double>(sample.size()) * static_cast<double>(classes)));
          loss = add(&tape, loss, scale(&tape, replay_mse, spec.der_alpha));
        }

        tape.backward(loss);

        if (si_on) {
          for (size_t i = 0; i < fe_tensors.size(); ++i) {
            theta_prev[i] = fe_tensors[i].data();
            grad_prev[i] = fe_tensors[i].grad();
          }
        }
        opt.step();
        if (si_on) {
          for (size_t i = 0; i < fe_tensors.size(); ++i) {
            const auto& now = fe_tensors[i].data();
            for (size_t j = 0; j < now.size(); ++j)
              spec.si->omega[i][j] += -grad_prev[i][j] * (now[j] - theta_prev[i][j]);
          }
        }
        if (replay_on) {
          const int64_t d = task.train.inputs.dim(1);
          for (size_t r = 0; r < rows.size(); ++r) {
            spec.buffer->insert(x.data().data() + static_cast<int64_t>(r) * d, d,
                                logits.data().data() + static_cast<int64_t>(r) * classes, classes,
                                task.task_id);
          }
        }
        loss_sum += loss.scalar_value() * static_cast<double>(rows.size());
      }
    } catch (const NumericError& e) {
      throw TrainingError(std::string("diverged: ") + e.what(), task.task_id,
                          spec.epoch_offset + epoch);
    }
    const double epoch_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw TrainingError("non-finite epoch loss", task.task_id, spec.epoch_offset + epoch);
    if (log)
      log->epochs.push_back({task.task_id, spec.epoch_offset + epoch, epoch_loss,
                             cfg.sgd.learning_rate, spec.name, fe.digest()});
    if (hook) hook(spec.epoch_offset + epoch);
  }
}

// Head-only quasi-Newton LP phase: logistic regression on frozen features
// over the full task train split, swept over the regularization grid with a
// stratified validation carve-out. Returns false when the solver failed to
// converge (caller falls back to the gradient LP phase).
bool lp_phase_lbfgs(const FeatureExtractor& fe, Head& head, const Task& task,
                    const TrainConfig& cfg) {
  const Tensor feats = fe.features(nullptr, task.train.inputs);
  const auto labels = task.local_labels(task.train);
  const int classes = task.num_classes();

  std::vector<double> grid;
  for (int i = 0; i < 100; ++i) grid.push_back(std::pow(10.0, -7.0 + 9.0 * i / 99.0));

  // stratified 20% validation carve-out
  std::map<int, std::vector<int64_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int64_t>(i));
  Rng rng = Rng(cfg.seed).substream("sk-val", static_cast<uint64_t>(task.task_id));
  std::vector<int64_t> val_rows, fit_rows;
  for (auto& [c, members] : by_class) {
    const auto n_c = static_cast<int64_t>(members.size());
    int64_t take = n_c >= 2 ? std::min<int64_t>(
                                  n_c - 1, static_cast<int64_t>(std::ceil(0.2 * static_cast<double>(n_c))))
                            : 0;
    auto picked = rng.sample_without_replacement(n_c, take);
    std::sort(picked.begin(), picked.end());
    size_t p = 0;
    for (int64_t i = 0; i < n_c; ++i) {
      if (p < picked.size() && picked[p] == i) {
        val_rows.push_back(members[static_cast<size_t>(i)]);
        ++p;
      } else {
        fit_rows.push_back(members[static_cast<size_t>(i)]);
      }
    }
  }
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(fit_rows.begin(), fit_rows.end());

  const Tensor fit_x = gather_rows(feats, fit_rows);
  const auto fit_y = gather(labels, fit_rows);
  double best_reg = grid.front();
  if (!val_rows.empty()) {
    const Tensor val_x = gather_rows(feats, val_rows);
    const auto val_y = gather(labels, val_rows);
    double best_acc = -1.0;
    for (double reg : grid) {
      const auto fit = fit_logistic(fit_x, fit_y, classes, reg);
      const double acc = fit.model.accuracy(val_x, val_y);
      if (acc > best_acc) {
        best_acc = acc;
        best_reg = reg;
      }
    }
  }
  const auto final_fit = fit_logistic(feats, labels, classes, best_reg);
  const size_t wn = static_cast<size_t>(final_fit.model.dim) * classes;
  std::copy(final_fit.model.params.begin(), final_fit.model.params.begin() + wn,
            head.weights.data().begin());
  std::copy(final_fit.model.params.begin() + wn, final_fit.model.params.end(),
            head.bias.data().begin());
  return final_fit.converged;
}

void run_lpft(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& cfg,
              Rng& shuffle_rng, SIState* si, ReplayBuffer* buffer,
              const HeadRegistry* replay_heads, TrainLog* log, TaskTrainMeta& meta,
              const EpochHook& hook) {
  meta.has_lp_phase = true;
  meta.lp_theta_before = fe.digest();
  fe.set_requires_grad(false);
  if (cfg.method_params.lp_solver == LpSolver::Lbfgs) {
    const bool converged = lp_phase_lbfgs(fe, head, task, cfg);
    if (!converged) {
      // solver fallback: rerun the head fit with plain SGD
      meta.lp_solver_fallback = true;
      Head fresh = Head::init(head.task_id, static_cast<int>(head.weights.dim(0)),
                              static_cast<int>(head.weights.dim(1)), Rng(cfg.seed));
      head.weights.data() = fresh.weights.data();
      head.bias.data() = fresh.bias.data();
      PhaseSpec lp{"lp", cfg.lp_epochs, 0, true, nullptr, nullptr, 0.0, nullptr};
      run_phase(fe, head, task, cfg, shuffle_rng, lp, log, hook);
    }
  } else {
    PhaseSpec lp{"lp", cfg.lp_epochs, 0, true, nullptr, nullptr, 0.0, nullptr};
    run_phase(fe, head, task, cfg, shuffle_rng, lp, log, hook);
  }
  fe.set_requires_grad(true);
  meta.lp_theta_after = fe.digest();
  if (meta.lp_theta_before != meta.lp_theta_after)
    throw UsageError("lp phase mutated the feature extractor");
  meta.lp_final_fullbatch_loss = fullbatch_loss(fe, head, task, task.train);

  meta.ft_initial_fullbatch_loss = fullbatch_loss(fe, head, task, task.train);
  PhaseSpec ft{"ft",  cfg.ft_epochs, cfg.lp_epochs, false, si, buffer,
               cfg.method_params.der_alpha, replay_heads};
  run_phase(fe, head, task, cfg, shuffle_rng, ft, log, hook);
}

using FinalizeHook = std::function<void(TaskTrainMeta&)>;

TaskTrainMeta train_one_task(FeatureExtractor& fe, Head& head, const Task& task,
                             const TrainConfig& cfg, SIState* si, ReplayBuffer* buffer,
                             const HeadRegistry* replay_heads, TrainLog* log,
                             const EpochHook& hook, const FinalizeHook& finalize = nullptr) {
  TaskTrainMeta meta;
  meta.task = task.task_id;
  Rng shuffle_rng = Rng(cfg.seed).substream("shuffle", static_cast<uint64_t>(task.task_id));
  switch (cfg.method) {
    case Method::Sgd: {
      PhaseSpec joint{"joint", cfg.epochs_per_task, 0, false, nullptr, nullptr, 0.0, nullptr};
      run_phase(fe, head, task, cfg, shuffle_rng, joint, log, hook);
      break;
    }
    case Method::Si: {
      PhaseSpec joint{"joint", cfg.epochs_per_task, 0, false, si, nullptr, 0.0, nullptr};
      run_phase(fe, head, task, cfg, shuffle_rng, joint, log, hook);
      break;
    }
    case Method::Der: {
      PhaseSpec joint{"joint",       cfg.epochs_per_task,         0, false, nullptr, buffer,
                      cfg.method_params.der_alpha, replay_heads};
      run_phase(fe, head, task, cfg, shuffle_rng, joint, log, hook);
      break;
    }
    case Method::Lpft:
      run_lpft(fe, head, task, cfg, shuffle_rng, nullptr, nullptr, nullptr, log, meta, hook);
      break;
    case Method::SiLpft:
      run_lpft(fe, head, task, cfg, shuffle_rng, si, nullptr, nullptr, log, meta, hook);
      break;
    case Method::DerLpft:
      run_lpft(fe, head, task, cfg, shuffle_rng, nullptr, buffer, replay_heads, log, meta, hook);
      break;
  }
  // Checkpoint selection first (the selected snapshot is what gets passed
  // on), then SI consolidation against it: Omega update, omega reset,
  // theta* <- theta.
  if (finalize) finalize(meta);
  if (si && (cfg.method == Method::Si || cfg.method == Method::SiLpft)) si->consolidate(fe);
  meta.theta_digest = fe.digest();
  return meta;
}

int total_epochs(const TrainConfig& cfg) {
  return method_has_lp_phase(cfg.method) ? cfg.lp_epochs + cfg.ft_epochs : cfg.epochs_per_task;
}

}  // namespace

void train_task_sgd(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& config,
                    TrainLog* log) {
  TrainConfig cfg = config;
  cfg.method = Method::Sgd;
  auto meta = train_one_task(fe, head, task, cfg, nullptr, nullptr, nullptr, log, nullptr);
  if (log) log->tasks.push_back(meta);
}

void train_task_lpft(FeatureExtractor& fe, Head& head, const Task& task, const TrainConfig& config,
                     TrainLog* log) {
  TrainConfig cfg = config;
  cfg.method = Method::Lpft;
  auto meta = train_one_task(fe, head, task, cfg, nullptr, nullptr, nullptr, log, nullptr);
  if (log) log->tasks.push_back(meta);
}

void train_task_si(FeatureExtractor& fe, Head& head, const Task& task, SIState& si,
                   const TrainConfig& config, TrainLog* log) {
  TrainConfig cfg = config;
  cfg.method = Method::Si;
  auto meta = train_one_task(fe, head, task, cfg, &si, nullptr, nullptr, log, nullptr);
  if (log) log->tasks.push_back(meta);
}

void train_task_der(FeatureExtractor& fe, Head& head, const Task& task, ReplayBuffer& buffer,
                    const TrainConfig& config, TrainLog* log) {
  TrainConfig cfg = config;
  cfg.method = Method::Der;
  HeadRegistry self;
  self.add(head);
  auto meta = train_one_task(fe, head, task, cfg, nullptr, &buffer, &self, log, nullptr);
  if (log) log->tasks.push_back(meta);
}

TrainResult train_stream(const TaskStream& stream, const ModelConfig& model_config,
                         const TrainConfig& config) {
  config.validate();
  model_config.validate();
  if (stream.tasks.empty()) throw ConfigError("train_stream: empty task stream");
  for (const auto& t : stream.tasks)
    if (t.num_classes() != model_config.classes_per_task)
      throw ConfigError("train_stream: task class count does not match model config");

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.fe = FeatureExtractor::init(model_config);
  const bool uses_si = config.method == Method::Si || config.method == Method::SiLpft;
  const bool uses_der = config.method == Method::Der || config.method == Method::DerLpft;
  SIState si;
  if (uses_si)
    si = SIState::init(result.fe, config.method_params.si_c, config.method_params.si_xi);
  ReplayBuffer buffer(uses_der ? config.method_params.der_capacity : 0,
                      Rng(config.seed).substream("reservoir"));

  for (const auto& task : stream.tasks) {
    for (int tid : result.heads.task_ids()) result.heads.get(tid).set_requires_grad(false);
    Head head = Head::init(task.task_id, model_config.feature_dim, model_config.classes_per_task,
                           Rng(config.seed));
    result.heads.add(head);
    Head& live_head = result.heads.get(task.task_id);

    // best_avg keeps the per-epoch snapshot with the highest average accuracy
    // over tasks seen so far; ties go to the later epoch.
    struct Snapshot {
      int epoch = -1;
      double score = -1.0;
      std::vector<std::vector<double>> fe_data;
      std::vector<double> head_w, head_b;
    } best;
    EpochHook hook;
    if (config.checkpoint_strategy == CheckpointStrategy::BestAvg) {
      hook = [&](int epoch) {
        const double score =
            average_accuracy_up_to(result.fe, result.heads, stream, task.task_id);
        if (score >= best.score) {
          best.epoch = epoch;
          best.score = score;
          best.fe_data.clear();
          for (const auto& t : result.fe.parameter_tensors()) best.fe_data.push_back(t.data());
          best.head_w = live_head.weights.data();
          best.head_b = live_head.bias.data();
        }
      };
    }

    auto finalize = [&](TaskTrainMeta& meta) {
      if (config.checkpoint_strategy == CheckpointStrategy::BestAvg && best.epoch >= 0) {
        auto tensors = result.fe.parameter_tensors();
        for (size_t i = 0; i < tensors.size(); ++i) tensors[i].data() = best.fe_data[i];
        live_head.weights.data() = best.head_w;
        live_head.bias.data() = best.head_b;
        meta.selected_epoch = best.epoch;
        meta.selected_avg_accuracy = best.score;
      } else {
        meta.selected_epoch = total_epochs(config) - 1;
        meta.selected_avg_accuracy =
            average_accuracy_up_to(result.fe, result.heads, stream, task.task_id);
      }
    };
    TaskTrainMeta meta =
        train_one_task(result.fe, live_head, task, config, uses_si ? &si : nullptr,
                       uses_der ? &buffer : nullptr, &result.heads, &result.log, hook, finalize);
    result.log.tasks.push_back(meta);
  }

  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

Checkpoint select_checkpoint(const std::vector<Checkpoint>& history,
                             const std::function<double(const Checkpoint&)>& eval) {
  if (history.empty()) throw UsageError("select_checkpoint: empty history");
  size_t best = 0;
  double best_score = eval(history[0]);
  for (size_t i = 1; i < history.size(); ++i) {
    const double score = eval(history[i]);
    if (score >= best_score) {
      best_score = score;
      best = i;
    }
  }
  Checkpoint out = history[best];
  return out;
}

void sgd_adapt(FeatureExtractor& fe, Head& head, const Tensor& inputs,
               const std::vector<int>& labels, int epochs, bool head_only, const SgdConfig& sgd,
               Rng& shuffle_rng) {
  const int64_t n = inputs.dim(0);
  const int64_t batch = std::max<int64_t>(1, sgd.batch_size);
  std::vector<Tensor> params = head.parameter_tensors();
  if (head_only) {
    fe.set_requires_grad(false);
  } else {
    const auto fe_params = fe.parameter_tensors();
    params.insert(params.begin(), fe_params.begin(), fe_params.end());
  }
  SgdOptimizer opt(params, sgd);
  opt.zero_grad();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  try {
    for (int epoch = 0; epoch < epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (int64_t start = 0; start < n; start += batch) {
        const int64_t stop = std::min(n, start + batch);
        const std::vector<int64_t> rows(order.begin() + start, order.begin() + stop);
        Tensor x = gather_rows(inputs, rows);
        std::vector<int> y = gather(labels, rows);
        Tape tape;
        Tensor loss = cross_entropy(&tape, predict(&tape, fe, head, x), y);
        tape.backward(loss);
        opt.step();
      }
    }
  } catch (...) {
    if (head_only) fe.set_requires_grad(true);
    throw;
  }
  if (head_only) fe.set_requires_grad(true);
}

double dataset_accuracy(const FeatureExtractor& fe, const Head& head, const Task& task,
                        const LabeledDataset& data) {
  const auto pred = predict_classes(fe, head, data.inputs);
  const auto truth = task.local_labels(data);
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double average_accuracy_up_to(const FeatureExtractor& fe, const HeadRegistry& heads,
                              const TaskStream& stream, int last_task) {
  double total = 0.0;
  int count = 0;
  for (const auto& task : stream.tasks) {
    if (task.task_id > last_task) break;
    total += dataset_accuracy(fe, heads.get(task.task_id), task, task.test);
    ++count;
  }
  if (count == 0) throw UsageError("average_accuracy_up_to: no tasks evaluated");
  return total / static_cast<double>(count);
}

double fullbatch_loss(const FeatureExtractor& fe, const Head& head, const Task& task,
                      const LabeledDataset& data) {
  Tensor logits = predict(nullptr, fe, head, data.inputs);
  return cross_entropy(nullptr, logits, task.local_labels(data)).scalar_value();
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    ordered_json j;
    j["task"] = e.task;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["phase"] = e.phase;
    j["theta_digest"] = to_hex(e.theta_digest);
    out += j.dump();
    out += "\n";
  }
  for (const auto& t : tasks) {
    ordered_json j;
    j["task"] = t.task;
    ordered_json c;
    c["selected_epoch"] = t.selected_epoch;
    c["avg_accuracy"] = t.selected_avg_accuracy;
    c["theta_digest"] = to_hex(t.theta_digest);
    if (t.has_lp_phase) {
      c["lp_theta_before"] = to_hex(t.lp_theta_before);
      c["lp_theta_after"] = to_hex(t.lp_theta_after);
      c["lp_final_fullbatch_loss"] = t.lp_final_fullbatch_loss;
      c["ft_initial_fullbatch_loss"] = t.ft_initial_fullbatch_loss;
      c["lp_solver_fallback"] = t.lp_solver_fallback;
    }
    j["checkpoint"] = c;
    out += j.dump();
    out += "\n";
  }
  ordered_json tail;
  tail["wall_seconds"] = wall_seconds;
  out += tail.dump();
  out += "\n";
  return out;
}

void TrainLog::write_jsonl(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write train log: " + path);
  f << to_jsonl();
  if (!f) throw IoError("train log write failed: " + path);
}

}  // namespace contilearn
