#ifndef TTRL_H
#define TTRL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TtrlStatus {
  TTRL_STATUS_OK = 0,
  TTRL_STATUS_NULL_POINTER = 1,
  TTRL_STATUS_INVALID_ARGUMENT = 2,
  TTRL_STATUS_LENGTH_MISMATCH = 3,
  TTRL_STATUS_SHAPE_MISMATCH = 4,
  TTRL_STATUS_NON_FINITE = 5,
  TTRL_STATUS_ALL_SKIPPED = 6,
  TTRL_STATUS_PARSE = 7,
  TTRL_STATUS_IO = 8,
  TTRL_STATUS_INTERNAL = 9,
} TtrlStatus;

typedef enum TtrlWeightKind {
  TTRL_WEIGHT_KIND_LINEAR = 0,
  TTRL_WEIGHT_KIND_SQRT = 1,
  TTRL_WEIGHT_KIND_EXP = 2,
  TTRL_WEIGHT_KIND_OFF = 3,
} TtrlWeightKind;

/**
 * Opaque dataset handle; includes the hidden answers for evaluation.
 */
typedef struct TtrlDataset TtrlDataset;

/**
 * Opaque policy handle.
 */
typedef struct TtrlPolicy TtrlPolicy;

/**
 * Initial-policy knobs; see [`ttrl_init_params_default`].
 */
typedef struct TtrlInitParams {
  double format_bias;
  double answer_noise;
  double logit_noise;
  uint64_t seed;
} TtrlInitParams;

/**
 * Training settings; see [`ttrl_train_config_default`].
 */
typedef struct TtrlTrainConfig {
  uint32_t m_votes;
  size_t g_rollouts;
  double temperature;
  size_t steps;
  size_t global_batch;
  size_t report_step;
  enum TtrlWeightKind weight_kind;
  size_t mas_attempts;
  /**
   * Stop drawing attempts at the first non-uniform group.
   */
  bool lazy_attempts;
  bool refresh_labels;
  double epsilon;
  double beta;
  double learning_rate;
  size_t inner_epochs;
  size_t accumulation_steps;
  uint64_t seed;
} TtrlTrainConfig;

typedef struct TtrlBaselines {
  double di;
  double dimv;
} TtrlBaselines;

/**
 * Oracle accuracies of a [`ttrl_train`] call.
 */
typedef struct TtrlTrainSummary {
  size_t steps_run;
  size_t skipped_questions;
  double pseudo_label_accuracy;
  double report_accuracy;
  double final_accuracy;
} TtrlTrainSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *ttrl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ttrl_version(void);

struct TtrlInitParams ttrl_init_params_default(void);

struct TtrlTrainConfig ttrl_train_config_default(void);

/**
 * # Safety
 * `out` must be a valid pointer to a `TtrlDataset*`.
 */
enum TtrlStatus ttrl_dataset_generate(size_t n,
                                      size_t k,
                                      double signal,
                                      double signal_spread,
                                      uint64_t seed,
                                      struct TtrlDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid `TtrlDataset*` slot.
 */
enum TtrlStatus ttrl_dataset_load(const char *path, struct TtrlDataset **out);

/**
 * # Safety
 * `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum TtrlStatus ttrl_dataset_save(const struct TtrlDataset *dataset, const char *path);

/**
 * Number of questions, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or come from this library.
 */
size_t ttrl_dataset_len(const struct TtrlDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or come from this library and not be used again.
 */
void ttrl_dataset_free(struct TtrlDataset *dataset);

/**
 * # Safety
 * `dataset` must come from this library; `params` may be NULL for defaults;
 * `out` must be a valid `TtrlPolicy*` slot.
 */
enum TtrlStatus ttrl_policy_init(const struct TtrlDataset *dataset,
                                 const struct TtrlInitParams *params,
                                 struct TtrlPolicy **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` a valid `TtrlPolicy*` slot.
 */
enum TtrlStatus ttrl_policy_load(const char *path, struct TtrlPolicy **out);

/**
 * Writes the bit-exact text checkpoint.
 *
 * # Safety
 * `policy` must come from this library; `path` must be NUL-terminated.
 */
enum TtrlStatus ttrl_policy_save(const struct TtrlPolicy *policy, const char *path);

/**
 * Number of updates applied since initialisation, or 0 for NULL.
 *
 * # Safety
 * `policy` must be NULL or come from this library.
 */
uint64_t ttrl_policy_snapshot_id(const struct TtrlPolicy *policy);

/**
 * # Safety
 * `policy` must be NULL or come from this library and not be used again.
 */
void ttrl_policy_free(struct TtrlPolicy *policy);

/**
 * Greedy-answer accuracy of `policy` on `dataset`.
 *
 * # Safety
 * Handles must come from this library; `out` must be valid.
 */
enum TtrlStatus ttrl_eval_accuracy(const struct TtrlPolicy *policy,
                                   const struct TtrlDataset *dataset,
                                   double *out);

/**
 * Direct-inference and majority-vote accuracy.
 *
 * # Safety
 * Handles must come from this library; `config` may be NULL for defaults;
 * `out` must be valid.
 */
enum TtrlStatus ttrl_baselines(const struct TtrlPolicy *policy,
                               const struct TtrlDataset *dataset,
                               const struct TtrlTrainConfig *config,
                               struct TtrlBaselines *out);

/**
 * Pseudo-labels `dataset` with `policy`, adapts a copy of it, and returns
 * the adapted policy in `out_policy`. The answers in `dataset` are used
 * only for the accuracies in `out_summary`. When `metrics_path` is not NULL
 * one JSON record per step is written there.
 *
 * # Safety
 * Handles must come from this library; `config` may be NULL for defaults;
 * `metrics_path` may be NULL or NUL-terminated; `out_summary` may be NULL;
 * `out_policy` must be a valid `TtrlPolicy*` slot.
 */
enum TtrlStatus ttrl_train(const struct TtrlPolicy *policy,
                           const struct TtrlDataset *dataset,
                           const struct TtrlTrainConfig *config,
                           const char *metrics_path,
                           struct TtrlPolicy **out_policy,
                           struct TtrlTrainSummary *out_summary);

/**
 * Confidence weight `f(conf)` for `conf` in (0, 1].
 *
 * # Safety
 * `out` must be valid.
 */
enum TtrlStatus ttrl_weight_fn(enum TtrlWeightKind kind, double conf, double *out);

/**
 * Group-normalised advantages of `g` rewards scaled by `f(conf)`, written
 * to `out_values[0..g]`. `out_collapse` receives whether the group had no
 * spread; it may be NULL.
 *
 * # Safety
 * `rewards` and `out_values` must each point to `g` doubles.
 */
enum TtrlStatus ttrl_compute_advantages(const double *rewards,
                                        size_t g,
                                        double conf,
                                        enum TtrlWeightKind kind,
                                        double *out_values,
                                        bool *out_collapse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TTRL_H */
