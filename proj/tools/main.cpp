// Command-line front end; links only the C API of libcontilearn.
//
// Verbs:
//   run <config> [--out DIR]
//   probe <checkpoint> <config> [--out DIR]
//   report <run-dir>
//   sweep-fraction <config> --fractions 0.01,0.05,0.1 [--out DIR]
//
// Exit codes: 0 success, 2 config error, 3 training failure, 4 I/O failure.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "contilearn.h"

namespace {

int finish(clr_status status) {
  if (status == CLR_OK) return 0;
  std::fprintf(stderr, "error: %s\n", clr_last_error());
  return static_cast<int>(status);
}

std::vector<double> parse_fractions(const std::string& csv) {
  std::vector<double> out;
  size_t start = 0;
  while (start <= csv.size()) {
    size_t comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    const std::string tok = csv.substr(start, comma - start);
    if (!tok.empty()) out.push_back(std::stod(tok));
    start = comma + 1;
  }
  return out;
}

struct ExperimentHandle {
  clr_experiment* exp = nullptr;
  ~ExperimentHandle() { clr_experiment_close(exp); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contilearn: sequential pretraining lab with few-shot probe evaluation"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, run_dir, out_dir, fractions_csv;

  auto* run = app.add_subcommand("run", "train + probe an experiment config");
  run->add_option("config", config_path, "experiment config (json)")->required();
  run->add_option("--out", out_dir, "output directory (default: config output_dir)");

  auto* probe = app.add_subcommand("probe", "probe a saved checkpoint");
  probe->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  probe->add_option("config", config_path, "experiment config (json)")->required();
  probe->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "ranking table over reports in a run dir");
  report->add_option("run-dir", run_dir, "directory holding report.json files")->required();

  auto* sweep = app.add_subcommand("sweep-fraction", "few-shot fraction sweep");
  sweep->add_option("config", config_path, "experiment config (json)")->required();
  sweep->add_option("--fractions", fractions_csv, "comma-separated fractions in (0,1]")
      ->required();
  sweep->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  if (report->parsed()) {
    char* text = nullptr;
    const clr_status st = clr_report_run_dir(run_dir.c_str(), &text);
    if (st == CLR_OK && text) {
      std::fputs(text, stdout);
      clr_string_free(text);
    }
    return finish(st);
  }

  ExperimentHandle h;
  const clr_status open_st = clr_experiment_open(config_path.c_str(), &h.exp);
  if (open_st != CLR_OK) return finish(open_st);
  const char* out = out_dir.empty() ? nullptr : out_dir.c_str();

  if (run->parsed()) {
    const clr_status st = clr_experiment_run(h.exp, out);
    if (st == CLR_OK) std::printf("run complete; reports written\n");
    return finish(st);
  }
  if (probe->parsed()) {
    const clr_status st = clr_experiment_probe(h.exp, checkpoint_path.c_str(), out);
    if (st == CLR_OK) std::printf("probe reports written\n");
    return finish(st);
  }
  if (sweep->parsed()) {
    std::vector<double> fractions;
    try {
      fractions = parse_fractions(fractions_csv);
    } catch (const std::exception&) {
      std::fprintf(stderr, "error: bad --fractions value\n");
      return 2;
    }
    const clr_status st = clr_experiment_sweep_fraction(
        h.exp, fractions.data(), static_cast<int>(fractions.size()), out);
    if (st == CLR_OK) std::printf("sweep written\n");
    return finish(st);
  }
  return 2;
}
