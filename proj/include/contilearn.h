/* C API for the contilearn shared library.
 *
 * All entry points return a clr_status code; 0 means success. The experiment
 * handle is opaque and owns a parsed, validated configuration. Detailed error
 * text for the calling thread is available from clr_last_error().
 */
#ifndef CONTILEARN_H
#define CONTILEARN_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CLR_API __declspec(dllexport)
#else
#define CLR_API __attribute__((visibility("default")))
#endif

typedef enum clr_status {
  CLR_OK = 0,
  CLR_ERR_INTERNAL = 1,
  CLR_ERR_CONFIG = 2,
  CLR_ERR_TRAINING = 3,
  CLR_ERR_IO = 4
} clr_status;

typedef struct clr_experiment clr_experiment;

/* Library version string, e.g. "0.1.0". */
CLR_API const char* clr_version(void);

/* Message for the most recent failure on this thread ("" if none). */
CLR_API const char* clr_last_error(void);

/* The six learning rates: [0.003, 0.01, 0.03, 0.1, 0.3, 1.0] * batch/256. */
CLR_API clr_status clr_lr_grid(int batch_size, double out[6]);

/* Parse + validate a config file / JSON text into an experiment handle. */
CLR_API clr_status clr_experiment_open(const char* config_path, clr_experiment** out);
CLR_API clr_status clr_experiment_open_json(const char* json_text, clr_experiment** out);
CLR_API void clr_experiment_close(clr_experiment* exp);

/* Train (grid + selected reruns), probe, and write reports under output_dir.
 * Passing NULL output_dir uses the config's output_dir. */
CLR_API clr_status clr_experiment_run(clr_experiment* exp, const char* output_dir);

/* Probe a saved checkpoint under the experiment's data config. */
CLR_API clr_status clr_experiment_probe(clr_experiment* exp, const char* checkpoint_path,
                                        const char* output_dir);

/* Few-shot fraction sweep; fractions in (0, 1]. */
CLR_API clr_status clr_experiment_sweep_fraction(clr_experiment* exp, const double* fractions,
                                                 int count, const char* output_dir);

/* Build the ranking table over report.json files under run_dir. The returned
 * text must be released with clr_string_free. */
CLR_API clr_status clr_report_run_dir(const char* run_dir, char** out_text);

CLR_API void clr_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* CONTILEARN_H */
