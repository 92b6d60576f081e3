#ifndef GSPO_LAB_H
#define GSPO_LAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(GSPO_LAB_BUILDING_LIBRARY)
#define GL_API __attribute__((visibility("default")))
#else
#define GL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum gl_status {
  GL_OK = 0,
  GL_ERR_INTERNAL = 1,
  GL_ERR_CONFIG = 2,
  GL_ERR_DEGENERATE = 3,
  GL_ERR_IO = 4
} gl_status;

typedef struct gl_dataset gl_dataset;
typedef struct gl_policy gl_policy;

/* Message of the last failed call on this thread; "" if none. */
GL_API const char* gl_last_error_message(void);
GL_API const char* gl_version(void);

/* Datasets (JSONL, one labeled record per line). */
GL_API gl_status gl_dataset_load(const char* path, gl_dataset** out);
GL_API size_t gl_dataset_size(const gl_dataset* ds);
GL_API size_t gl_dataset_fraud_count(const gl_dataset* ds);
GL_API void gl_dataset_free(gl_dataset* ds);

/* Policies. n_fillers selects the vocabulary (0..37 filler tokens). */
GL_API gl_status gl_policy_zeros(size_t n_fillers, gl_policy** out);
GL_API gl_status gl_policy_load(const char* path, size_t n_fillers, gl_policy** out);
GL_API gl_status gl_policy_save(const gl_policy* policy, const char* path);
GL_API gl_status gl_policy_shape(const gl_policy* policy, size_t* rows, size_t* cols);
GL_API void gl_policy_free(gl_policy* policy);

/* Rewards and verdict parsing. verdict: -1 none, 0 legitimate, 1 fraudulent. */
GL_API gl_status gl_reward(const char* completion, int label_is_fraud, double accuracy_weight,
                           double format_weight, double* accuracy, double* format, double* total);
GL_API gl_status gl_extract_verdict(const char* completion, int* verdict);

typedef struct gl_metrics_report {
  double accuracy;
  double recall_tpr;
  double specificity_tnr;
  double precision;
  double fpr;
  double f1;
  double avg_tokens;
  double format_failure_rate;
  double faithfulness_pass_rate;
  uint64_t n;
} gl_metrics_report;

/* Positive class: fraudulent. */
GL_API gl_status gl_metrics(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn,
                            gl_metrics_report* out);

/* mode: 0 standard, 1 compressed (default compressed setup).
   Writes up to buf_len bytes including the terminator; *needed gets the full size. */
GL_API gl_status gl_render_prompt(const gl_dataset* ds, size_t index, int mode, char* buf,
                                  size_t buf_len, size_t* needed);

typedef struct gl_eval_options {
  int mode;          /* 0 standard, 1 compressed */
  int sample;        /* 0 greedy, 1 sampled */
  double temperature;
  uint64_t seed;
} gl_eval_options;

GL_API gl_status gl_evaluate(const gl_policy* policy, const gl_dataset* ds,
                             const gl_eval_options* options, gl_metrics_report* out);

/* Commands. Negative / zero "has_" fields leave config values untouched. */
typedef struct gl_run_options {
  const char* out;   /* NULL: config value */
  int has_seed;
  uint64_t seed;
  int algorithm;     /* -1 config, 0 grpo, 1 gspo */
  int mode;          /* -1 config, 0 standard, 1 compressed */
} gl_run_options;

GL_API void gl_run_options_init(gl_run_options* options);

GL_API gl_status gl_cmd_gen_data(const char* config_path, const gl_run_options* options);
GL_API gl_status gl_cmd_train(const char* config_path, const gl_run_options* options);
GL_API gl_status gl_cmd_compare(const char* config_path, const gl_run_options* options);

typedef struct gl_eval_args {
  const char* checkpoint;
  const char* data;
  const char* out;
  const char* model_name; /* NULL: "policy" */
  size_t n_fillers;
  gl_eval_options options;
} gl_eval_args;

GL_API void gl_eval_args_init(gl_eval_args* args);
GL_API gl_status gl_cmd_eval(const gl_eval_args* args);

#ifdef __cplusplus
}
#endif

#endif /* GSPO_LAB_H */
