#include <cmath>

#include "contilearn/logreg.hpp"
#include "contilearn/probes.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace contilearn;

namespace {

ModelConfig probe_model(uint64_t seed = 2) {
  ModelConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {8};
  cfg.feature_dim = 4;
  cfg.num_groups = 2;
  cfg.classes_per_task = 2;
  cfg.init_seed = seed;
  return cfg;
}

Task manual_task(const std::vector<std::vector<double>>& fewshot_rows,
                 const std::vector<int>& fewshot_labels,
                 const std::vector<std::vector<double>>& test_rows,
                 const std::vector<int>& test_labels) {
  Task task;
  task.task_id = 0;
  task.class_set = {0, 1};
  auto build = [](const std::vector<std::vector<double>>& rows, const std::vector<int>& labels) {
    LabeledDataset d;
    const auto n = int64_t(rows.size());
    const auto dim = int64_t(rows[0].size());
    Tensor inputs = Tensor::zeros({n, dim});
    for (int64_t i = 0; i < n; ++i)
      std::copy(rows[size_t(i)].begin(), rows[size_t(i)].end(),
                inputs.data().begin() + i * dim);
    d.inputs = std::move(inputs);
    d.labels = labels;
    d.class_set = {0, 1};
    return d;
  };
  task.train = build(fewshot_rows, fewshot_labels);
  task.fewshot = task.train;
  task.test = build(test_rows, test_labels);
  for (int64_t i = 0; i < task.fewshot.size(); ++i) task.fewshot_indices.push_back(i);
  return task;
}

}  // namespace

TEST_CASE("knn: an exact duplicate of a few-shot point takes its label at k=1") {
  Rng rng(3);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> r(8);
    for (auto& v : r) v = rng.uniform(-1, 1);
    rows.push_back(r);
    labels.push_back(i % 2);
  }
  const Task task = manual_task(rows, labels, {rows[3]}, {labels[3]});
  FeatureExtractor fe = FeatureExtractor::init(probe_model());
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Knn;
  cfg.knn_k = 1;
  CHECK(knn_probe_task(fe, task, cfg) == 1.0);
}

TEST_CASE("knn: single-label few-shot set predicts that label everywhere") {
  Rng rng(4);
  std::vector<std::vector<double>> rows, test_rows;
  std::vector<int> labels, test_labels;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> r(8);
    for (auto& v : r) v = rng.uniform(-1, 1);
    rows.push_back(r);
    labels.push_back(1);
  }
  for (int i = 0; i < 10; ++i) {
    std::vector<double> r(8);
    for (auto& v : r) v = rng.uniform(-1, 1);
    test_rows.push_back(r);
    test_labels.push_back(i < 4 ? 1 : 0);  // label-1 frequency 0.4
  }
  const Task task = manual_task(rows, labels, test_rows, test_labels);
  FeatureExtractor fe = FeatureExtractor::init(probe_model());
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Knn;
  const auto pred = knn_predict(fe, task, cfg);
  for (int p : pred) CHECK(p == 1);
  CHECK(knn_probe_task(fe, task, cfg) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("knn: weighted 5-neighbor vote matches exhaustive enumeration") {
  const TaskStream s = testutil::tiny_stream(2, 2, 8, 25, 15, 2.0, 1.0, 31, 0.6);
  const Task& task = s.tasks[0];
  FeatureExtractor fe = FeatureExtractor::init(probe_model(9));
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Knn;
  cfg.knn_k = 5;
  cfg.knn_temperature = 0.1;
  const auto pred = knn_predict(fe, task, cfg);

  // independent oracle: recompute everything with plain loops and a full sort
  Tensor ref = fe.features(nullptr, task.fewshot.inputs);
  Tensor query = fe.features(nullptr, task.test.inputs);
  const int64_t d = ref.dim(1);
  auto normalize = [&](Tensor& m) {
    for (int64_t i = 0; i < m.dim(0); ++i) {
      double norm = 0;
      for (int64_t j = 0; j < d; ++j) norm += m.at(i, j) * m.at(i, j);
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;
      for (int64_t j = 0; j < d; ++j) m.at(i, j) /= norm;
    }
  };
  normalize(ref);
  normalize(query);
  const auto ref_labels = task.local_labels(task.fewshot);
  for (int64_t q = 0; q < query.dim(0); ++q) {
    std::vector<std::pair<double, int64_t>> sims;
    for (int64_t r = 0; r < ref.dim(0); ++r) {
      double sv = 0;
      for (int64_t j = 0; j < d; ++j) sv += query.at(q, j) * ref.at(r, j);
      sims.push_back({sv, r});
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double votes[2] = {0, 0};
    for (int i = 0; i < 5; ++i)
      votes[ref_labels[size_t(sims[size_t(i)].second)]] += std::exp(sims[size_t(i)].first / 0.1);
    const int expect = votes[1] > votes[0] ? 1 : 0;
    CHECK(pred[size_t(q)] == expect);
  }
}

TEST_CASE("knn predictions are invariant to uniform feature rescaling") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(11));
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Knn;
  const auto before = knn_predict(fe, s.tasks[0], cfg);

  FeatureExtractor scaled = fe.clone();
  for (double& v : scaled.params().get("fe.out.w").data()) v *= 3.7;
  for (double& v : scaled.params().get("fe.out.b").data()) v *= 3.7;
  const auto after = knn_predict(scaled, s.tasks[0], cfg);
  CHECK(before == after);
}

TEST_CASE("linear probe separates two singleton classes at the smallest reg") {
  const Task task = manual_task({{5, 5, 5, 5, 5, 5, 5, 5}, {-5, -5, -5, -5, -5, -5, -5, -5}},
                                {0, 1},
                                {{5, 5, 5, 5, 5, 5, 5, 5}, {-5, -5, -5, -5, -5, -5, -5, -5}},
                                {0, 1});
  FeatureExtractor fe = FeatureExtractor::init(probe_model(13));
  const Tensor feats = fe.features(nullptr, task.fewshot.inputs);
  const auto fit = fit_logistic(feats, {0, 1}, 2, 1e-7);
  CHECK(fit.model.accuracy(feats, {0, 1}) == 1.0);

  ProbeConfig cfg;
  cfg.kind = ProbeKind::Linear;
  const auto res = linear_probe_task(fe, task, cfg);
  CHECK(res.accuracy == 1.0);
}

TEST_CASE("stronger regularization shrinks the weight norm") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(15));
  const Task& task = s.tasks[0];
  const Tensor feats = fe.features(nullptr, task.fewshot.inputs);
  const auto labels = task.local_labels(task.fewshot);
  const auto weak = fit_logistic(feats, labels, 2, 1e-7);
  const auto strong = fit_logistic(feats, labels, 2, 1e2);
  CHECK(strong.model.weight_norm() < weak.model.weight_norm());
}

TEST_CASE("linear probe objective matches an independent gradient-descent oracle") {
  // 50-point convex instance: 25 points duplicated with one flipped label
  Rng rng(17);
  const int64_t n = 50, d = 6;
  Tensor feats = Tensor::zeros({n, d});
  std::vector<int> labels(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < 25; ++i) {
    for (int64_t j = 0; j < d; ++j) feats.at(i, j) = rng.uniform(-1, 1);
    labels[size_t(i)] = int(rng.uniform_int(2));
  }
  for (int64_t i = 25; i < 50; ++i) {
    for (int64_t j = 0; j < d; ++j) feats.at(i, j) = feats.at(i - 25, j);
    labels[size_t(i)] = labels[size_t(i - 25)];
  }
  labels[49] = 1 - labels[49];  // flipped duplicate keeps the optimum finite
  const double reg = 1e-3;

  // oracle: plain full-batch gradient descent on an independently coded
  // objective (mean cross-entropy + 0.5*reg*||W||^2)
  auto oracle_objective = [&](const std::vector<double>& p, std::vector<double>* g) {
    const size_t wn = size_t(d) * 2;
    if (g) g->assign(p.size(), 0.0);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double z[2] = {p[wn], p[wn + 1]};
      for (int64_t j = 0; j < d; ++j) {
        z[0] += feats.at(i, j) * p[size_t(j * 2)];
        z[1] += feats.at(i, j) * p[size_t(j * 2 + 1)];
      }
      const double mx = std::max(z[0], z[1]);
      const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
      const double denom = e0 + e1;
      const int y = labels[size_t(i)];
      loss += -std::log((y == 0 ? e0 : e1) / denom);
      if (g) {
        const double p0 = e0 / denom, p1 = e1 / denom;
        const double dz[2] = {(p0 - (y == 0 ? 1 : 0)) / double(n), (p1 - (y == 1 ? 1 : 0)) / double(n)};
        for (int64_t j = 0; j < d; ++j) {
          (*g)[size_t(j * 2)] += dz[0] * feats.at(i, j);
          (*g)[size_t(j * 2 + 1)] += dz[1] * feats.at(i, j);
        }
        (*g)[wn] += dz[0];
        (*g)[wn + 1] += dz[1];
      }
    }
    loss /= double(n);
    for (size_t k = 0; k < wn; ++k) {
      loss += 0.5 * reg * p[k] * p[k];
      if (g) (*g)[k] += reg * p[k];
    }
    return loss;
  };

  std::vector<double> x(size_t(d) * 2 + 2, 0.0), g;
  double f = oracle_objective(x, &g);
  double step = 1.0;
  for (int iter = 0; iter < 20000; ++iter) {
    std::vector<double> trial(x.size());
    double fn = 0.0;
    for (;;) {
      for (size_t k = 0; k < x.size(); ++k) trial[k] = x[k] - step * g[k];
      fn = oracle_objective(trial, nullptr);
      if (fn <= f) break;
      step *= 0.5;
      if (step < 1e-12) break;
    }
    if (fn > f) break;
    x = trial;
    f = fn;
    step *= 1.3;
    oracle_objective(x, &g);
  }

  const auto fit = fit_logistic(feats, labels, 2, reg);
  CHECK(std::fabs(fit.objective - f) < 1e-6);
  CHECK(fit.converged);
  // returned objective beats the zero classifier at every grid value
  for (double r : default_reg_grid(10)) {
    const auto f2 = fit_logistic(feats, labels, 2, r);
    std::vector<double> zero(size_t(d) * 2 + 2, 0.0);
    CHECK(f2.objective <= logistic_objective(feats, labels, 2, r, zero, nullptr) + 1e-12);
  }
}

TEST_CASE("lpft probe with zero ft epochs reproduces the linear probe exactly") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(19));

  ProbeConfig lin;
  lin.kind = ProbeKind::Linear;
  lin.seed = 77;
  const auto lin_res = linear_probe_task(fe, s.tasks[0], lin);

  ProbeConfig lp;
  lp.kind = ProbeKind::Lpft;
  lp.lp_solver = LpSolver::Lbfgs;
  lp.ft_epochs = 0;
  lp.lr_grid = {0.1};
  lp.seed = 77;
  const auto lp_res = lpft_probe_task(fe, s.tasks[0], lp);
  CHECK(lp_res.result.accuracy == lin_res.accuracy);
}

TEST_CASE("lpft probe never mutates the frozen extractor") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(23));
  const uint64_t before = fe.digest();
  ProbeConfig lp;
  lp.kind = ProbeKind::Lpft;
  lp.lp_epochs = 2;
  lp.ft_epochs = 2;
  lp.lr_grid = {0.02, 0.05};
  const ProbeResult r = run_probe(fe, s, lp);
  CHECK(fe.digest() == before);
  CHECK(r.adapted_digest != 0);
  for (const auto& t : r.per_task) {
    CHECK(t.accuracy >= 0.0);
    CHECK(t.accuracy <= 1.0);
    CHECK((t.hyperparam == 0.02 || t.hyperparam == 0.05));
  }
}

TEST_CASE("lpft probe joint phase starts exactly at the lp solution") {
  const TaskStream s = testutil::tiny_stream();
  const Task& task = s.tasks[0];
  FeatureExtractor base = FeatureExtractor::init(probe_model(29));
  FeatureExtractor fe = base.clone();
  Head head = Head::init(0, 4, 2, Rng(5));
  SgdConfig sgd;
  sgd.learning_rate = 0.05;
  sgd.batch_size = 8;
  Rng rng(6);
  sgd_adapt(fe, head, task.fewshot.inputs, task.local_labels(task.fewshot), 3, true, sgd, rng);
  const double lp_final = fullbatch_loss(fe, head, task, task.fewshot);
  const double ft_initial = fullbatch_loss(fe, head, task, task.fewshot);
  CHECK(lp_final == ft_initial);  // deterministic forward, identical parameters
  CHECK(fe.digest() == base.digest());  // head-only phase left theta alone
}

TEST_CASE("lpft probe discards diverging grid points and errors when all diverge") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(31));
  ProbeConfig lp;
  lp.kind = ProbeKind::Lpft;
  lp.lp_epochs = 2;
  // enough joint steps for an absurd rate to overflow through the norm layers
  lp.ft_epochs = 60;

  SUBCASE("mixed grid keeps the sane point") {
    lp.lr_grid = {1e14, 0.05};
    const auto out = lpft_probe_task(fe, s.tasks[0], lp);
    CHECK(out.result.hyperparam == 0.05);
    CHECK(out.result.flagged);
  }
  SUBCASE("all diverge") {
    lp.lr_grid = {1e14, 1e15};
    CHECK_THROWS_AS(lpft_probe_task(fe, s.tasks[0], lp), TrainingError);
  }
}

TEST_CASE("run_probe averages equal the per-task mean") {
  const TaskStream s = testutil::tiny_stream();
  FeatureExtractor fe = FeatureExtractor::init(probe_model(37));
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Knn;
  const ProbeResult r = run_probe(fe, s, cfg);
  REQUIRE(r.per_task.size() == size_t(s.num_tasks()));
  double mean = 0;
  for (const auto& t : r.per_task) mean += t.accuracy;
  mean /= double(r.per_task.size());
  CHECK(r.average() == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("best_probe picks the max average, cheap probe on ties") {
  auto mk = [](ProbeKind kind, std::vector<double> accs) {
    ProbeResult r;
    r.kind = kind;
    for (size_t i = 0; i < accs.size(); ++i) r.per_task.push_back({int(i), accs[i], 0.0});
    return r;
  };
  SUBCASE("single probe returned") {
    std::vector<ProbeResult> rs = {mk(ProbeKind::Linear, {0.5, 0.7})};
    CHECK(best_probe(rs).kind == ProbeKind::Linear);
  }
  SUBCASE("the published sgd row: lpft probe wins") {
    std::vector<ProbeResult> rs = {mk(ProbeKind::Knn, {0.7764}), mk(ProbeKind::Linear, {0.8830}),
                                   mk(ProbeKind::Lpft, {0.9346})};
    CHECK(best_probe(rs).kind == ProbeKind::Lpft);
  }
  SUBCASE("exact tie goes to the cheaper probe") {
    std::vector<ProbeResult> rs = {mk(ProbeKind::Lpft, {0.9}), mk(ProbeKind::Knn, {0.9})};
    CHECK(best_probe(rs).kind == ProbeKind::Knn);
  }
  SUBCASE("empty input") {
    std::vector<ProbeResult> rs;
    CHECK_THROWS_AS(best_probe(rs), UsageError);
  }
}

TEST_CASE("empty few-shot split is a data error") {
  const TaskStream s = testutil::tiny_stream();
  Task task = s.tasks[0];
  task.fewshot = LabeledDataset{};
  FeatureExtractor fe = FeatureExtractor::init(probe_model(41));
  ProbeConfig cfg;
  CHECK_THROWS_AS(knn_probe_task(fe, task, cfg), DataError);
}
