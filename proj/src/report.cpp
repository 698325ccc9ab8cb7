#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "contilearn/harness.hpp"
#include "json.hpp"

namespace contilearn {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

namespace {

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << content;
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string probe_result_json(const ProbeResult& result) {
  ordered_json j;
  j["probe"] = probe_kind_to_string(result.kind);
  ordered_json tasks = ordered_json::array();
  for (const auto& t : result.per_task) {
    ordered_json tj;
    tj["task"] = t.task;
    tj["accuracy"] = t.accuracy;
    tj["hyperparam"] = t.hyperparam;
    if (t.flagged) tj["note"] = t.note;
    tasks.push_back(tj);
  }
  j["per_task"] = tasks;
  j["average"] = result.average();
  if (result.kind == ProbeKind::Lpft) j["adapted_digest"] = to_hex(result.adapted_digest);
  return j.dump(2) + "\n";
}

void write_report_files(const EvalReport& report, const ExperimentConfig& cfg,
                        const std::string& output_dir) {
  // report.json: everything except "timestamp" is a pure function of the config
  ordered_json j;
  j["schema"] = "contilearn-report-v1";
  j["timestamp"] = iso_timestamp();
  j["code_version"] = report.code_version;
  j["method"] = report.method;
  j["config_hash"] = to_hex(report.config_hash);
  ordered_json notes;
  notes["fewshot_sampling"] = "stratified per class, ceil(fraction * n_c), without replacement";
  notes["ci_definition"] = "mean +- 1.96 * sample sd / sqrt(n_seeds)";
  notes["hyperparam_selection"] =
      "stratified 20% validation carve-out from the few-shot split (select_on_test reports the "
      "test-selected number instead)";
  notes["knn"] = "cosine similarity on L2-normalized features, k = min(200, |fewshot|), "
                 "temperature 0.1, ties to lowest class";
  notes["method_regularization_scope"] = "feature extractor only; heads are task-specific";
  notes["feature_dim"] = cfg.model.feature_dim;
  j["notes"] = notes;
  j["num_tasks"] = report.num_tasks;
  j["fewshot_fraction"] = report.fewshot_fraction;
  j["lr_policy"] = report.lr_policy;
  j["lr_selection_metric"] = report.lr_selection_metric;
  j["selected_lr"] = report.selected_lr;

  ordered_json grid = ordered_json::array();
  for (const auto& p : report.grid) {
    ordered_json pj;
    pj["lr"] = p.lr;
    pj["status"] = p.failed ? "failed" : "ok";
    if (p.failed) pj["error"] = p.error;
    pj["per_seed_knn"] = p.per_seed_knn;
    if (!p.failed) {
      pj["mean"] = p.mean;
      pj["half_width"] = p.half_width;
    }
    grid.push_back(pj);
  }
  j["grid"] = grid;

  ordered_json probes;
  for (const auto& agg : report.probes) {
    ordered_json pj;
    ordered_json per_seed = ordered_json::array();
    for (const auto& s : agg.per_seed) {
      ordered_json sj;
      sj["seed"] = s.seed;
      sj["average"] = s.result.average();
      ordered_json tasks = ordered_json::array();
      for (const auto& t : s.result.per_task) {
        ordered_json tj;
        tj["task"] = t.task;
        tj["accuracy"] = t.accuracy;
        tj["hyperparam"] = t.hyperparam;
        if (t.flagged) tj["note"] = t.note;
        tasks.push_back(tj);
      }
      sj["per_task"] = tasks;
      per_seed.push_back(sj);
    }
    pj["per_seed"] = per_seed;
    pj["seed_averages"] = agg.seed_averages;
    pj["mean"] = agg.mean;
    pj["half_width"] = agg.half_width;
    probes[probe_kind_to_string(agg.kind)] = pj;
  }
  j["probes"] = probes;
  j["best_probe"] = report.best_probe_kind;
  write_text_file(fs::path(output_dir) / "report.json", j.dump(2) + "\n");

  // report.csv: one row per (probe, seed, task)
  std::string csv = "method,probe,seed,task,accuracy,hyperparam\n";
  for (const auto& agg : report.probes) {
    for (const auto& s : agg.per_seed) {
      for (const auto& t : s.result.per_task) {
        ordered_json acc = t.accuracy;
        ordered_json hp = t.hyperparam;
        csv += report.method + "," + probe_kind_to_string(agg.kind) + "," +
               std::to_string(s.seed) + "," + std::to_string(t.task) + "," + acc.dump() + "," +
               hp.dump() + "\n";
      }
    }
  }
  write_text_file(fs::path(output_dir) / "report.csv", csv);

  // report.txt: compact table mirroring the "mean (+- hw)" cell layout
  std::string txt;
  txt += "method: " + report.method + "\n";
  txt += "selected lr: " + fmt(report.selected_lr, 6) +
         " (policy: " + report.lr_policy + ", metric: " + report.lr_selection_metric + ")\n";
  txt += "tasks: " + std::to_string(report.num_tasks) +
         "  fewshot fraction: " + fmt(report.fewshot_fraction, 2) + "\n\n";
  txt += "probe      mean (+- 95% hw)      per-seed averages\n";
  for (const auto& agg : report.probes) {
    std::string per_seed;
    for (size_t i = 0; i < agg.seed_averages.size(); ++i) {
      if (i) per_seed += ", ";
      per_seed += fmt(agg.seed_averages[i]);
    }
    std::string name = probe_kind_to_string(agg.kind);
    name.resize(10, ' ');
    txt += name + " " + fmt(agg.mean) + " (+-" + fmt(agg.half_width) + ")   " + per_seed + "\n";
  }
  txt += "\nbest probe: " + report.best_probe_kind + "\n";
  write_text_file(fs::path(output_dir) / "report.txt", txt);
}

EvalReport read_report_json(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw CorruptFileError("report " + path + ": " + e.what());
  }
  EvalReport r;
  try {
    r.method = j.at("method").get<std::string>();
    r.code_version = j.value("code_version", "");
    r.selected_lr = j.value("selected_lr", 0.0);
    r.lr_policy = j.value("lr_policy", "");
    r.lr_selection_metric = j.value("lr_selection_metric", "");
    r.num_tasks = j.value("num_tasks", 0);
    r.fewshot_fraction = j.value("fewshot_fraction", 0.0);
    r.best_probe_kind = j.value("best_probe", "");
    if (j.contains("probes")) {
      for (const auto& [name, pj] : j.at("probes").items()) {
        ProbeAggregate agg;
        agg.kind = probe_kind_from_string(name);
        agg.seed_averages = pj.at("seed_averages").get<std::vector<double>>();
        agg.mean = pj.at("mean").get<double>();
        agg.half_width = pj.at("half_width").get<double>();
        if (pj.contains("per_seed")) {
          for (const auto& sj : pj.at("per_seed")) {
            SeedProbeOutcome s;
            s.seed = sj.at("seed").get<uint64_t>();
            s.result.kind = agg.kind;
            for (const auto& tj : sj.at("per_task")) {
              TaskProbeResult t;
              t.task = tj.at("task").get<int>();
              t.accuracy = tj.at("accuracy").get<double>();
              t.hyperparam = tj.value("hyperparam", 0.0);
              s.result.per_task.push_back(t);
            }
            agg.per_seed.push_back(std::move(s));
          }
        }
        r.probes.push_back(std::move(agg));
      }
    }
  } catch (const json::exception& e) {
    throw CorruptFileError("report " + path + ": " + e.what());
  }
  return r;
}

RankingTable make_ranking_table(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw UsageError("ranking table needs at least two methods");
  RankingTable table;
  for (const auto& r : reports) table.methods.push_back(r.method);
  std::sort(table.methods.begin(), table.methods.end());

  std::set<std::string> probe_names;
  for (const auto& r : reports)
    for (const auto& agg : r.probes) probe_names.insert(probe_kind_to_string(agg.kind));
  for (const char* name : {"knn", "linear", "lpft"})
    if (probe_names.count(name)) table.probe_columns.push_back(name);
  table.probe_columns.push_back("best");

  auto find_agg = [](const EvalReport& r, const std::string& probe) -> const ProbeAggregate* {
    for (const auto& agg : r.probes)
      if (probe_kind_to_string(agg.kind) == probe) return &agg;
    return nullptr;
  };

  for (const auto& probe : table.probe_columns) {
    // methods sorted by mean descending; exact ties keep name order
    std::vector<std::pair<std::string, RankingCell>> column;
    for (const auto& method : table.methods) {
      const auto it = std::find_if(reports.begin(), reports.end(),
                                   [&](const EvalReport& r) { return r.method == method; });
      if (it == reports.end()) continue;
      RankingCell cell;
      if (probe == "best") {
        double best_mean = -1.0;
        std::string best_name;
        double best_hw = 0.0;
        for (const char* name : {"knn", "linear", "lpft"}) {
          const auto* agg = find_agg(*it, name);
          if (agg && agg->mean > best_mean) {
            best_mean = agg->mean;
            best_hw = agg->half_width;
            best_name = name;
          }
        }
        if (best_name.empty()) continue;
        cell.mean = best_mean;
        cell.half_width = best_hw;
        cell.best_probe = best_name;
      } else {
        const auto* agg = find_agg(*it, probe);
        if (!agg) continue;
        cell.mean = agg->mean;
        cell.half_width = agg->half_width;
      }
      column.emplace_back(method, cell);
    }
    std::stable_sort(column.begin(), column.end(),
                     [](const auto& a, const auto& b) { return a.second.mean > b.second.mean; });
    int rank = 1;
    for (auto& [method, cell] : column) {
      cell.rank = rank++;
      table.cells[method][probe] = cell;
    }
  }
  return table;
}

std::string RankingTable::to_text() const {
  constexpr int kColWidth = 24;
  std::string out = "method      ";
  for (const auto& p : probe_columns) {
    std::string h = p;
    h.resize(kColWidth, ' ');
    out += h;
  }
  out += "\n";
  for (const auto& method : methods) {
    std::string row = method;
    row.resize(12, ' ');
    const auto mit = cells.find(method);
    for (const auto& p : probe_columns) {
      std::string cell_text = "-";
      if (mit != cells.end()) {
        const auto cit = mit->second.find(p);
        if (cit != mit->second.end()) {
          const auto& c = cit->second;
          cell_text = std::to_string(c.rank) + ". " + fmt(c.mean) + " (+-" + fmt(c.half_width) + ")";
          if (!c.best_probe.empty()) cell_text += " [" + c.best_probe + "]";
        }
      }
      cell_text.resize(kColWidth, ' ');
      row += cell_text;
    }
    out += row + "\n";
  }
  return out;
}

std::string report_run_dir(const std::string& run_dir) {
  if (!fs::exists(run_dir)) throw IoError("run dir does not exist: " + run_dir);
  std::vector<std::string> report_paths;
  const fs::path top = fs::path(run_dir) / "report.json";
  if (fs::exists(top)) report_paths.push_back(top.string());
  std::vector<fs::path> children;
  for (const auto& entry : fs::directory_iterator(run_dir))
    if (entry.is_directory()) children.push_back(entry.path());
  std::sort(children.begin(), children.end());
  for (const auto& child : children) {
    const fs::path p = child / "report.json";
    if (fs::exists(p)) report_paths.push_back(p.string());
  }
  if (report_paths.empty()) throw IoError("no report.json found under: " + run_dir);

  std::vector<EvalReport> reports;
  for (const auto& p : report_paths) reports.push_back(read_report_json(p));

  std::string text;
  if (reports.size() == 1) {
    const auto& r = reports[0];
    text += "single method: " + r.method + "\n";
    for (const auto& agg : r.probes)
      text += probe_kind_to_string(agg.kind) + ": " + fmt(agg.mean) + " (+-" +
              fmt(agg.half_width) + ")\n";
    text += "best probe: " + r.best_probe_kind + "\n";
  } else {
    const RankingTable table = make_ranking_table(reports);
    text = table.to_text();
    ordered_json j;
    ordered_json methods = ordered_json::array();
    for (const auto& method : table.methods) {
      ordered_json mj;
      mj["method"] = method;
      for (const auto& p : table.probe_columns) {
        const auto cit = table.cells.at(method).find(p);
        if (cit == table.cells.at(method).end()) continue;
        ordered_json cj;
        cj["rank"] = cit->second.rank;
        cj["mean"] = cit->second.mean;
        cj["half_width"] = cit->second.half_width;
        if (!cit->second.best_probe.empty()) cj["probe"] = cit->second.best_probe;
        mj[p] = cj;
      }
      methods.push_back(mj);
    }
    j["methods"] = methods;
    write_text_file(fs::path(run_dir) / "ranking.json", j.dump(2) + "\n");
  }
  write_text_file(fs::path(run_dir) / "ranking.txt", text);
  return text;
}

}  // namespace contilearn
