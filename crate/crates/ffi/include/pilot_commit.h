#ifndef PILOT_COMMIT_H
#define PILOT_COMMIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_PARSE_ERROR = 3,
  PC_STATUS_INVALID_CONFIG = 4,
  PC_STATUS_INVALID_ARGUMENT = 5,
  PC_STATUS_INDEX_OUT_OF_RANGE = 6,
  PC_STATUS_DEGENERATE_GROUP = 7,
  PC_STATUS_RUN_FAILED = 8,
  PC_STATUS_IO_ERROR = 9,
  PC_STATUS_PANIC = 10,
} PcStatus;

typedef enum PcMethod {
  PC_METHOD_GRPO = 0,
  PC_METHOD_DAPO = 1,
  PC_METHOD_PC = 2,
  // All three methods on identical seeds.
  PC_METHOD_COMPARE = 3,
} PcMethod;

// Opaque experiment configuration.
typedef struct PcConfig PcConfig;

// Opaque result of a finished experiment.
typedef struct PcOutcome PcOutcome;

// Per-run summary. Undefined reals are NaN.
typedef struct PcRunInfo {
  enum PcMethod method;
  uint64_t seed;
  uint64_t steps_completed;
  bool exhausted;
  uint64_t exhausted_at_step;
  uint64_t sampled_total;
  uint64_t trained_total;
  double initial_success;
  double peak_success;
  double final_success;
  uint64_t evictions;
} PcRunInfo;

typedef struct PcStepMetrics {
  uint64_t step;
  double mean_success;
  double mean_reward_std;
  uint64_t sampled_cumulative;
  uint64_t trained_cumulative;
  uint64_t buffer_size;
  uint64_t evictions_cumulative;
  uint32_t extra_rounds;
} PcStepMetrics;

// Seed-averaged comparison. Undefined values are NaN.
typedef struct PcComparison {
  double target;
  double grpo_rollouts_to_target;
  double dapo_rollouts_to_target;
  double pc_rollouts_to_target;
  double grpo_over_pc;
  double dapo_over_pc;
} PcComparison;

typedef struct PcGroupStats {
  double mean;
  double std;
  size_t group_size;
} PcGroupStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null if none.
// The pointer stays valid until the next failing call on this thread.
const char *pc_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void pc_string_free(char *s);

// A config holding every default value.
struct PcConfig *pc_config_default(void);

// Parses and validates a TOML config.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum PcStatus pc_config_from_toml(const char *toml, struct PcConfig **out);

// Serializes the config to TOML. Returns null on failure.
//
// # Safety
// `config` must be a live handle.
char *pc_config_to_toml(const struct PcConfig *config);

// # Safety
// `config` must be null or a live handle, which is invalid afterwards.
void pc_config_free(struct PcConfig *config);

// # Safety
// `config` must be a live handle.
enum PcStatus pc_config_set_method(struct PcConfig *config, enum PcMethod method);

// # Safety
// `config` must be a live handle.
enum PcStatus pc_config_set_max_steps(struct PcConfig *config, uint64_t max_steps);

// Replaces the seed list with `len` seeds read from `seeds`.
//
// # Safety
// `config` must be a live handle and `seeds` point to `len` values.
enum PcStatus pc_config_set_seeds(struct PcConfig *config, const uint64_t *seeds, size_t len);

// # Safety
// `config` must be a live handle and `dir` a NUL-terminated path.
enum PcStatus pc_config_set_output_dir(struct PcConfig *config, const char *dir);

// Runs the experiment in memory. With `write_files` set, metrics files
// and the summary are also written to the config's output directory.
//
// # Safety
// `config` must be a live handle and `out` a valid pointer.
enum PcStatus pc_run(const struct PcConfig *config, bool write_files, struct PcOutcome **out);

// # Safety
// `outcome` must be null or a live handle, which is invalid afterwards.
void pc_outcome_free(struct PcOutcome *outcome);

// Number of (method, seed) runs in the outcome; 0 for null.
//
// # Safety
// `outcome` must be null or a live handle.
size_t pc_outcome_run_count(const struct PcOutcome *outcome);

// # Safety
// `outcome` must be a live handle and `out` a valid pointer.
enum PcStatus pc_outcome_run_info(const struct PcOutcome *outcome,
                                  size_t index,
                                  struct PcRunInfo *out);

// Metrics recorded after step `step_index` of run `run_index`.
//
// # Safety
// `outcome` must be a live handle and `out` a valid pointer.
enum PcStatus pc_outcome_step_metrics(const struct PcOutcome *outcome,
                                      size_t run_index,
                                      size_t step_index,
                                      struct PcStepMetrics *out);

// Comparison of a `Compare` run. Fails with `InvalidArgument` for
// single-method outcomes.
//
// # Safety
// `outcome` must be a live handle and `out` a valid pointer.
enum PcStatus pc_outcome_comparison(const struct PcOutcome *outcome, struct PcComparison *out);

// The summary document as JSON. Returns null on failure.
//
// # Safety
// `outcome` must be a live handle.
char *pc_outcome_summary_json(const struct PcOutcome *outcome);

// Mean and population standard deviation of a binary reward group.
//
// # Safety
// `rewards` must point to `len` bytes and `out` be a valid pointer.
enum PcStatus pc_group_stats(const uint8_t *rewards, size_t len, struct PcGroupStats *out);

// Writes `len` standardized advantages to `out`. Zero-variance groups
// yield zeros and `Ok`.
//
// # Safety
// `rewards` must point to `len` bytes and `out` to room for `len` doubles.
enum PcStatus pc_advantages(const uint8_t *rewards, size_t len, double *out);

// Surrogate-objective gradient with respect to the logit at the sampling
// policy.
//
// # Safety
// `rewards` must point to `len` bytes and `out` be a valid pointer.
enum PcStatus pc_surrogate_gradient(double logit, const uint8_t *rewards, size_t len, double *out);

// Rollouts sampled and trained by one Pilot-Commit step without extra
// pilot rounds.
//
// # Safety
// `sampled` and `trained` must be valid pointers.
enum PcStatus pc_sampling_cost(size_t n_pilot,
                               size_t n_commit,
                               size_t b_t,
                               size_t oversample_s,
                               uint64_t *sampled,
                               uint64_t *trained);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PILOT_COMMIT_H */
