#include "contilearn/probes.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "contilearn/logreg.hpp"

namespace contilearn {

ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "knn") return ProbeKind::Knn;
  if (s == "linear") return ProbeKind::Linear;
  if (s == "lpft") return ProbeKind::Lpft;
  throw ConfigError("unknown probe kind: " + s);
}

std::string probe_kind_to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::Knn: return "knn";
    case ProbeKind::Linear: return "linear";
    case ProbeKind::Lpft: return "lpft";
  }
  throw UsageError("bad probe enum");
}

std::vector<double> default_reg_grid(int count, double lo_exp, double hi_exp) {
  if (count < 2) throw ConfigError("reg grid needs at least two values");
  std::vector<double> grid(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    grid[static_cast<size_t>(i)] =
        std::pow(10.0, lo_exp + (hi_exp - lo_exp) * static_cast<double>(i) / (count - 1));
  return grid;
}

void ProbeConfig::validate() const {
  if (knn_k < 1) throw ConfigError("probe: knn_k must be >= 1");
  if (!(knn_temperature > 0.0)) throw ConfigError("probe: knn_temperature must be positive");
  if (reg_grid.empty()) throw ConfigError("probe: reg_grid must be nonempty");
  for (double r : reg_grid)
    if (!(r > 0.0)) throw ConfigError("probe: reg values must be positive");
  if (lp_epochs < 0 || ft_epochs < 0) throw ConfigError("probe: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("probe: batch_size must be positive");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw ConfigError("probe: validation_fraction must be in [0,1)");
  if (kind == ProbeKind::Lpft && lr_grid.empty())
    throw ConfigError("probe: lpft probe needs a learning-rate grid");
}

double ProbeResult::average() const {
  if (per_task.empty()) throw UsageError("probe result has no tasks");
  double s = 0.0;
  for (const auto& t : per_task) s += t.accuracy;
  return s / static_cast<double>(per_task.size());
}

namespace {

void l2_normalize_rows(Tensor& m) {
  const int64_t n = m.dim(0), d = m.dim(1);
  for (int64_t i = 0; i < n; ++i) {
    double* row = m.data().data() + i * d;
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;  // zero feature rows stay zero
    for (int64_t j = 0; j < d; ++j) row[j] /= norm;
  }
}

// (fit rows, holdout rows), stratified per class; a singleton class
// contributes no holdout example.
std::pair<std::vector<int64_t>, std::vector<int64_t>> stratified_holdout(
    const std::vector<int>& labels, double fraction, Rng rng) {
  std::map<int, std::vector<int64_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int64_t>(i));
  std::vector<int64_t> fit, holdout;
  for (auto& [c, members] : by_class) {
    const auto n_c = static_cast<int64_t>(members.size());
    int64_t take = 0;
    if (fraction > 0.0 && n_c >= 2)
      take = std::min<int64_t>(n_c - 1,
                               static_cast<int64_t>(std::ceil(fraction * static_cast<double>(n_c))));
    auto picked = rng.sample_without_replacement(n_c, take);
    std::sort(picked.begin(), picked.end());
    size_t p = 0;
    for (int64_t i = 0; i < n_c; ++i) {
      if (p < picked.size() && picked[p] == i) {
        holdout.push_back(members[static_cast<size_t>(i)]);
        ++p;
      } else {
        fit.push_back(members[static_cast<size_t>(i)]);
      }
    }
  }
  std::sort(fit.begin(), fit.end());
  std::sort(holdout.begin(), holdout.end());
  return {std::move(fit), std::move(holdout)};
}

struct LinearFitOutcome {
  LogisticModel model;
  double reg = 0.0;
  bool converged = true;
  bool no_validation = false;
};

// Sweep the regularization grid with a stratified validation carve-out, then
// refit on everything at the selected value. Ties keep the first (smallest)
// grid value.
LinearFitOutcome linear_probe_fit(const Tensor& feats, const std::vector<int>& labels, int classes,
                                  const ProbeConfig& cfg, int task_id) {
  LinearFitOutcome out;
  Rng rng = Rng(cfg.seed).substream("probe-val", static_cast<uint64_t>(task_id));
  auto [fit_rows, val_rows] = stratified_holdout(labels, cfg.validation_fraction, rng);
  double best_reg = cfg.reg_grid.front();
  if (!val_rows.empty()) {
    const Tensor fit_x = gather_rows(feats, fit_rows);
    const auto fit_y = gather(labels, fit_rows);
    const Tensor val_x = gather_rows(feats, val_rows);
    const auto val_y = gather(labels, val_rows);
    double best_acc = -1.0;
    for (double reg : cfg.reg_grid) {
      const auto fit = fit_logistic(fit_x, fit_y, classes, reg);
      const double acc = fit.model.accuracy(val_x, val_y);
      if (acc > best_acc) {
        best_acc = acc;
        best_reg = reg;
      }
    }
  } else {
    out.no_validation = true;
  }
  const auto final_fit = fit_logistic(feats, labels, classes, best_reg);
  out.model = final_fit.model;
  out.reg = best_reg;
  out.converged = final_fit.converged;
  return out;
}

}  // namespace

std::vector<int> knn_predict(const FeatureExtractor& fe, const Task& task,
                             const ProbeConfig& config) {
  if (task.fewshot.size() == 0) throw DataError("knn probe: empty few-shot set");
  Tensor ref = fe.features(nullptr, task.fewshot.inputs);
  Tensor query = fe.features(nullptr, task.test.inputs);
  l2_normalize_rows(ref);
  l2_normalize_rows(query);
  const auto ref_labels = task.local_labels(task.fewshot);
  const int64_t n_ref = ref.dim(0), n_query = query.dim(0), d = ref.dim(1);
  const int64_t k = std::min<int64_t>(config.knn_k, n_ref);
  const int classes = task.num_classes();

  std::vector<int> predictions(static_cast<size_t>(n_query));
  std::vector<std::pair<double, int64_t>> sims(static_cast<size_t>(n_ref));
  for (int64_t q = 0; q < n_query; ++q) {
    const double* qrow = query.data().data() + q * d;
    for (int64_t r = 0; r < n_ref; ++r) {
      const double* rrow = ref.data().data() + r * d;
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += qrow[j] * rrow[j];
      sims[static_cast<size_t>(r)] = {s, r};
    }
    // top-k by similarity, index ascending on exact ties
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::vector<double> votes(static_cast<size_t>(classes), 0.0);
    for (int64_t i = 0; i < k; ++i) {
      const auto& [sim, idx] = sims[static_cast<size_t>(i)];
      votes[static_cast<size_t>(ref_labels[static_cast<size_t>(idx)])] +=
          std::exp(sim / config.knn_temperature);
    }
    int pred = 0;
    for (int c = 1; c < classes; ++c)
      if (votes[static_cast<size_t>(c)] > votes[static_cast<size_t>(pred)]) pred = c;
    predictions[static_cast<size_t>(q)] = pred;
  }
  return predictions;
}

double knn_probe_task(const FeatureExtractor& fe, const Task& task, const ProbeConfig& config) {
  const auto predictions = knn_predict(fe, task, config);
  const auto query_labels = task.local_labels(task.test);
  int64_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == query_labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

TaskProbeResult linear_probe_task(const FeatureExtractor& fe, const Task& task,
                                  const ProbeConfig& config) {
  if (task.fewshot.size() == 0) throw DataError("linear probe: empty few-shot set");
  const Tensor feats = fe.features(nullptr, task.fewshot.inputs);
  const auto labels = task.local_labels(task.fewshot);
  const Tensor te_feats = fe.features(nullptr, task.test.inputs);
  const auto te_labels = task.local_labels(task.test);
  const int classes = task.num_classes();

  TaskProbeResult res;
  res.task = task.task_id;
  if (config.select_on_test) {
    double best_acc = -1.0;
    double best_reg = config.reg_grid.front();
    bool best_converged = true;
    for (double reg : config.reg_grid) {
      const auto fit = fit_logistic(feats, labels, classes, reg);
      const double acc = fit.model.accuracy(te_feats, te_labels);
      if (acc > best_acc) {
        best_acc = acc;
        best_reg = reg;
        best_converged = fit.converged;
      }
    }
    res.accuracy = best_acc;
    res.hyperparam = best_reg;
    if (!best_converged) {
      res.flagged = true;
      res.note = "solver did not reach tolerance; best iterate used";
    }
    return res;
  }

  const auto fit = linear_probe_fit(feats, labels, classes, config, task.task_id);
  res.accuracy = fit.model.accuracy(te_feats, te_labels);
  res.hyperparam = fit.reg;
  if (!fit.converged) {
    res.flagged = true;
    res.note = "solver did not reach tolerance; best iterate used";
  }
  if (fit.no_validation) {
    res.flagged = true;
    res.note += res.note.empty() ? "" : "; ";
    res.note += "no validation carve-out; smallest reg used";
  }
  return res;
}

namespace {

struct AdaptedModel {
  FeatureExtractor fe;
  Head head;
  bool lp_fallback = false;
};

// One LP-FT adaptation of a copy of the frozen extractor at a given lr.
AdaptedModel lpft_adapt(const FeatureExtractor& frozen, const Task& task, const Tensor& inputs,
                        const std::vector<int>& labels, double lr, const ProbeConfig& cfg,
                        uint64_t stream_tag) {
  AdaptedModel m;
  m.fe = frozen.clone();
  m.fe.set_requires_grad(true);
  m.head = Head::init(task.task_id, static_cast<int>(frozen.config().feature_dim),
                      task.num_classes(), Rng(cfg.seed).substream("probe-head", stream_tag));
  SgdConfig sgd;
  sgd.learning_rate = lr;
  sgd.momentum = cfg.momentum;
  sgd.weight_decay = cfg.weight_decay;
  sgd.batch_size = cfg.batch_size;

  const uint64_t lp_theta_before = m.fe.digest();
  if (cfg.lp_solver == LpSolver::Lbfgs) {
    const Tensor feats = m.fe.features(nullptr, inputs);
    const auto fit = linear_probe_fit(feats, labels, task.num_classes(), cfg, task.task_id);
    if (fit.converged) {
      const size_t wn = static_cast<size_t>(fit.model.dim) * fit.model.classes;
      std::copy(fit.model.params.begin(), fit.model.params.begin() + wn,
                m.head.weights.data().begin());
      std::copy(fit.model.params.begin() + wn, fit.model.params.end(), m.head.bias.data().begin());
    } else {
      m.lp_fallback = true;
      Rng lp_rng = Rng(cfg.seed).substream("probe-lp-shuffle", stream_tag);
      sgd_adapt(m.fe, m.head, inputs, labels, cfg.lp_epochs, true, sgd, lp_rng);
    }
  } else {
    Rng lp_rng = Rng(cfg.seed).substream("probe-lp-shuffle", stream_tag);
    sgd_adapt(m.fe, m.head, inputs, labels, cfg.lp_epochs, true, sgd, lp_rng);
  }
  if (m.fe.digest() != lp_theta_before)
    throw UsageError("probe lp phase mutated the extractor copy");
  Rng ft_rng = Rng(cfg.seed).substream("probe-ft-shuffle", stream_tag);
  sgd_adapt(m.fe, m.head, inputs, labels, cfg.ft_epochs, false, sgd, ft_rng);
  return m;
}

double model_accuracy(const AdaptedModel& m, const Tensor& inputs, const std::vector<int>& labels) {
  const auto pred = predict_classes(m.fe, m.head, inputs);
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

LpftProbeTaskOutcome lpft_probe_task(const FeatureExtractor& fe, const Task& task,
                                     const ProbeConfig& config) {
  if (task.fewshot.size() == 0) throw DataError("lpft probe: empty few-shot set");
  if (config.lr_grid.empty()) throw ConfigError("lpft probe: empty learning-rate grid");
  const auto labels = task.local_labels(task.fewshot);
  const auto te_labels = task.local_labels(task.test);

  LpftProbeTaskOutcome out;
  out.result.task = task.task_id;

  // stream tag folds the task id so adaptation draws are private per task
  const auto tag = static_cast<uint64_t>(task.task_id);

  std::vector<int64_t> fit_rows, val_rows;
  if (!config.select_on_test) {
    Rng rng = Rng(config.seed).substream("probe-val", tag);
    std::tie(fit_rows, val_rows) = stratified_holdout(labels, config.validation_fraction, rng);
  }

  const bool validate = !config.select_on_test && !val_rows.empty();
  Tensor sel_inputs;
  std::vector<int> sel_labels;
  Tensor sel_eval_inputs;
  std::vector<int> sel_eval_labels;
  if (config.select_on_test) {
    sel_inputs = task.fewshot.inputs;
    sel_labels = labels;
    sel_eval_inputs = task.test.inputs;
    sel_eval_labels = te_labels;
  } else if (validate) {
    sel_inputs = gather_rows(task.fewshot.inputs, fit_rows);
    sel_labels = gather(labels, fit_rows);
    sel_eval_inputs = gather_rows(task.fewshot.inputs, val_rows);
    sel_eval_labels = gather(labels, val_rows);
  }

  double best_lr = 0.0;
  double best_acc = -1.0;
  int discarded = 0;
  if (validate || config.select_on_test) {
    for (size_t li = 0; li < config.lr_grid.size(); ++li) {
      const double lr = config.lr_grid[li];
      try {
        const AdaptedModel m = lpft_adapt(fe, task, sel_inputs, sel_labels, lr, config, tag);
        const double acc = model_accuracy(m, sel_eval_inputs, sel_eval_labels);
        if (acc > best_acc) {
          best_acc = acc;
          best_lr = lr;
        }
      } catch (const NumericError&) {
        ++discarded;
      } catch (const TrainingError&) {
        ++discarded;
      }
    }
    if (best_acc < 0.0)
      throw TrainingError("lpft probe: every learning rate diverged", task.task_id, -1);
  } else {
    // no validation possible: fall back to the first grid value
    best_lr = config.lr_grid.front();
    out.result.flagged = true;
    out.result.note = "no validation carve-out; first lr used";
  }

  AdaptedModel final_model = [&] {
    try {
      return lpft_adapt(fe, task, task.fewshot.inputs, labels, best_lr, config, tag);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("lpft probe: selected lr diverged on refit: ") + e.what(),
                          task.task_id, -1);
    }
  }();

  if (config.select_on_test) {
    out.result.accuracy = best_acc;  // selection metric is the test metric
  } else {
    out.result.accuracy = model_accuracy(final_model, task.test.inputs, te_labels);
  }
  out.result.hyperparam = best_lr;
  if (discarded > 0) {
    out.result.flagged = true;
    out.result.note += out.result.note.empty() ? "" : "; ";
    out.result.note += std::to_string(discarded) + " lr grid point(s) diverged and were discarded";
  }
  if (final_model.lp_fallback) {
    out.result.flagged = true;
    out.result.note += out.result.note.empty() ? "" : "; ";
    out.result.note += "lp solver fallback to sgd";
  }
  out.adapted_theta_digest = final_model.fe.digest();
  out.adapted_head_digest =
      fnv1a64(final_model.head.weights.data().data(),
              final_model.head.weights.data().size() * sizeof(double),
              fnv1a64(final_model.head.bias.data().data(),
                      final_model.head.bias.data().size() * sizeof(double)));
  return out;
}

ProbeResult run_probe(const FeatureExtractor& fe, const TaskStream& stream,
                      const ProbeConfig& config) {
  config.validate();
  const uint64_t before = fe.digest();
  ProbeResult result;
  result.kind = config.kind;
  uint64_t adapted = 1469598103934665603ull;
  for (const auto& task : stream.tasks) {
    switch (config.kind) {
      case ProbeKind::Knn: {
        TaskProbeResult r;
        r.task = task.task_id;
        r.accuracy = knn_probe_task(fe, task, config);
        r.hyperparam = static_cast<double>(std::min<int64_t>(config.knn_k, task.fewshot.size()));
        result.per_task.push_back(r);
        break;
      }
      case ProbeKind::Linear:
        result.per_task.push_back(linear_probe_task(fe, task, config));
        break;
      case ProbeKind::Lpft: {
        const auto outcome = lpft_probe_task(fe, task, config);
        result.per_task.push_back(outcome.result);
        adapted = fnv1a64(&outcome.adapted_theta_digest, sizeof(uint64_t), adapted);
        adapted = fnv1a64(&outcome.adapted_head_digest, sizeof(uint64_t), adapted);
        break;
      }
    }
  }
  if (config.kind == ProbeKind::Lpft) result.adapted_digest = adapted;
  if (fe.digest() != before) throw UsageError("probe mutated the frozen extractor");
  for (const auto& t : result.per_task)
    if (t.accuracy < 0.0 || t.accuracy > 1.0) throw NumericError("probe accuracy out of [0,1]");
  return result;
}

const ProbeResult& best_probe(const std::vector<ProbeResult>& results) {
  if (results.empty()) throw UsageError("best_probe: no probe results");
  auto rank = [](ProbeKind k) {
    switch (k) {
      case ProbeKind::Knn: return 0;
      case ProbeKind::Linear: return 1;
      case ProbeKind::Lpft: return 2;
    }
    return 3;
  };
  size_t best = 0;
  double best_avg = results[0].average();
  for (size_t i = 1; i < results.size(); ++i) {
    const double avg = results[i].average();
    if (avg > best_avg || (avg == best_avg && rank(results[i].kind) < rank(results[best].kind))) {
      best = i;
      best_avg = avg;
    }
  }
  return results[best];
}

}  // namespace contilearn
