#ifndef PAMRL_H
#define PAMRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PamrlStatus {
  PAMRL_STATUS_OK = 0,
  PAMRL_STATUS_NULL_POINTER = 1,
  PAMRL_STATUS_INVALID_ARGUMENT = 2,
  PAMRL_STATUS_BUFFER_TOO_SMALL = 3,
  PAMRL_STATUS_INVALID_CONFIG = 4,
  PAMRL_STATUS_NOT_RESET = 5,
  PAMRL_STATUS_NON_FINITE = 6,
  PAMRL_STATUS_IO = 7,
  PAMRL_STATUS_RUNTIME = 8,
  PAMRL_STATUS_PANIC = 9,
} PamrlStatus;

/**
 * Slice types accepted by [`pamrl_reward`].
 */
typedef enum PamrlSliceKind {
  PAMRL_SLICE_KIND_EMBB = 0,
  PAMRL_SLICE_KIND_MMTC = 1,
  PAMRL_SLICE_KIND_URLLC = 2,
} PamrlSliceKind;

/**
 * Opaque environment handle.
 */
typedef struct PamrlEnv PamrlEnv;

/**
 * Scalar outcome of one environment step.
 */
typedef struct PamrlStepInfo {
  double reward;
  double penalty;
  double utility;
  double soft_penalty;
} PamrlStepInfo;

/**
 * Summary of a finished training run.
 */
typedef struct PamrlTrainSummary {
  size_t iterations_run;
  size_t iterations_to_converge;
  bool converged;
  double final_smoothed_reward;
} PamrlTrainSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 *
 * The pointer stays valid until the next `pamrl_*` call on the same thread.
 */
const char *pamrl_last_error(void);

/**
 * NUL-terminated crate version; static storage.
 */
const char *pamrl_version(void);

/**
 * Build the environment of DU `du` from a run configuration in TOML.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a writable
 * pointer. On success `*out` owns a handle to release with
 * [`pamrl_env_free`].
 */
enum PamrlStatus pamrl_env_new(const char *config_toml, size_t du, struct PamrlEnv **out);

/**
 * Release a handle from [`pamrl_env_new`]. NULL is ignored.
 *
 * # Safety
 * `env` must be NULL or a live handle that is not used afterwards.
 */
void pamrl_env_free(struct PamrlEnv *env);

/**
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum PamrlStatus pamrl_env_action_dim(const struct PamrlEnv *env, size_t *out);

/**
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum PamrlStatus pamrl_env_feature_dim(const struct PamrlEnv *env, size_t *out);

/**
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum PamrlStatus pamrl_env_num_slices(const struct PamrlEnv *env, size_t *out);

/**
 * Start an episode and write the numeric state features.
 *
 * # Safety
 * `env` must be a live handle; `features` must hold `features_len` doubles.
 */
enum PamrlStatus pamrl_env_reset(struct PamrlEnv *env,
                                 uint64_t seed,
                                 double *features,
                                 size_t features_len);

/**
 * Apply a raw action in `[-1, 1]^action_dim`.
 *
 * `features` receives the next state; `info` may be NULL.
 *
 * # Safety
 * `env` must be a live handle; `action` must hold `action_len` doubles and
 * `features` `features_len` doubles.
 */
enum PamrlStatus pamrl_env_step(struct PamrlEnv *env,
                                const double *action,
                                size_t action_len,
                                double *features,
                                size_t features_len,
                                struct PamrlStepInfo *info);

/**
 * Per-slice QoS after the last reset or step.
 *
 * # Safety
 * `env` must be a live handle; `out` must hold `len` doubles.
 */
enum PamrlStatus pamrl_env_qos(const struct PamrlEnv *env, double *out, size_t len);

/**
 * Project a raw action onto a feasible allocation.
 *
 * Writes the slice/RB matrix `b` (`num_slices × num_rbs`, row-major) and the
 * UE/RB matrix `e` (`num_ues × num_rbs`) as 0/1 bytes.
 *
 * # Safety
 * `raw` must hold `raw_len` doubles, `ue_slices` `num_ues` entries, `b_out`
 * `num_slices * num_rbs` bytes and `e_out` `num_ues * num_rbs` bytes.
 */
enum PamrlStatus pamrl_project_action(const double *raw,
                                      size_t raw_len,
                                      size_t num_slices,
                                      size_t num_rbs,
                                      const size_t *ue_slices,
                                      size_t num_ues,
                                      uint8_t *b_out,
                                      uint8_t *e_out);

/**
 * Reward of one QoS vector: the sum of per-slice sigmoid scores minus the
 * shortfall penalty.
 *
 * # Safety
 * `qos`, `thresholds` and `kinds` must each hold `n` entries; `out` must be
 * writable.
 */
enum PamrlStatus pamrl_reward(const double *qos,
                              const double *thresholds,
                              const enum PamrlSliceKind *kinds,
                              size_t n,
                              double alpha,
                              double delta,
                              double margin,
                              double *out);

/**
 * Pretrain and train one seed of the run configuration at `config_path`,
 * writing the run files into `out_dir`. `summary` may be NULL.
 *
 * # Safety
 * `config_path` and `out_dir` must be NUL-terminated strings.
 */
enum PamrlStatus pamrl_train(const char *config_path,
                             uint64_t seed,
                             const char *out_dir,
                             struct PamrlTrainSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAMRL_H */
