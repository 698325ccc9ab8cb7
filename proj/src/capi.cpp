#include "contilearn.h"

#include <cstring>
#include <string>

#include "contilearn/harness.hpp"

using namespace contilearn;

struct clr_experiment {
  ExperimentConfig config;
};

namespace {

thread_local std::string g_last_error;

clr_status set_error(clr_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

// Exceptions map onto the CLI exit codes: config 2, training 3, io 4.
clr_status translate_current_exception() {
  try {
    throw;
  } catch (const ConfigError& e) {
    return set_error(CLR_ERR_CONFIG, e.what());
  } catch (const TrainingError& e) {
    return set_error(CLR_ERR_TRAINING, e.what());
  } catch (const NumericError& e) {
    return set_error(CLR_ERR_TRAINING, e.what());
  } catch (const DataError& e) {
    return set_error(CLR_ERR_IO, e.what());
  } catch (const IoError& e) {
    return set_error(CLR_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return set_error(CLR_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(CLR_ERR_INTERNAL, "unknown error");
  }
}

template <typename Fn>
clr_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CLR_OK;
  } catch (...) {
    return translate_current_exception();
  }
}

std::string pick_output_dir(const clr_experiment* exp, const char* output_dir) {
  if (output_dir && *output_dir) return output_dir;
  if (!exp->config.output_dir.empty()) return exp->config.output_dir;
  throw ConfigError("no output directory: pass one or set output_dir in the config");
}

}  // namespace

extern "C" {

const char* clr_version(void) { return kVersion; }

const char* clr_last_error(void) { return g_last_error.c_str(); }

clr_status clr_lr_grid(int batch_size, double out[6]) {
  if (!out) return set_error(CLR_ERR_CONFIG, "lr_grid: null output buffer");
  return guarded([&] {
    const auto grid = lr_grid(batch_size);
    for (size_t i = 0; i < 6; ++i) out[i] = grid[i];
  });
}

clr_status clr_experiment_open(const char* config_path, clr_experiment** out) {
  if (!config_path || !out) return set_error(CLR_ERR_CONFIG, "open: null argument");
  *out = nullptr;
  return guarded([&] { *out = new clr_experiment{load_experiment_config(config_path)}; });
}

clr_status clr_experiment_open_json(const char* json_text, clr_experiment** out) {
  if (!json_text || !out) return set_error(CLR_ERR_CONFIG, "open_json: null argument");
  *out = nullptr;
  return guarded([&] { *out = new clr_experiment{parse_experiment_config(json_text)}; });
}

void clr_experiment_close(clr_experiment* exp) { delete exp; }

clr_status clr_experiment_run(clr_experiment* exp, const char* output_dir) {
  if (!exp) return set_error(CLR_ERR_CONFIG, "run: null experiment");
  return guarded([&] { run_experiment(exp->config, pick_output_dir(exp, output_dir)); });
}

clr_status clr_experiment_probe(clr_experiment* exp, const char* checkpoint_path,
                                const char* output_dir) {
  if (!exp || !checkpoint_path) return set_error(CLR_ERR_CONFIG, "probe: null argument");
  return guarded([&] {
    probe_checkpoint_file(exp->config, checkpoint_path, pick_output_dir(exp, output_dir));
  });
}

clr_status clr_experiment_sweep_fraction(clr_experiment* exp, const double* fractions, int count,
                                         const char* output_dir) {
  if (!exp || !fractions || count < 1)
    return set_error(CLR_ERR_CONFIG, "sweep: need at least one fraction");
  return guarded([&] {
    std::vector<double> fs(fractions, fractions + count);
    sweep_fraction(exp->config, fs, pick_output_dir(exp, output_dir));
  });
}

clr_status clr_report_run_dir(const char* run_dir, char** out_text) {
  if (!run_dir || !out_text) return set_error(CLR_ERR_CONFIG, "report: null argument");
  *out_text = nullptr;
  return guarded([&] {
    const std::string text = report_run_dir(run_dir);
    *out_text = static_cast<char*>(std::malloc(text.size() + 1));
    if (!*out_text) throw std::bad_alloc();
    std::memcpy(*out_text, text.c_str(), text.size() + 1);
  });
}

void clr_string_free(char* s) { std::free(s); }

}  // extern "C"
