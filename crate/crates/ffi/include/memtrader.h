#ifndef MEMTRADER_H
#define MEMTRADER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MtStatus {
  MT_STATUS_OK = 0,
  MT_STATUS_NULL_POINTER = 1,
  MT_STATUS_INVALID_ARGUMENT = 2,
  MT_STATUS_INVALID_CONFIG = 3,
  MT_STATUS_PARSE = 4,
  MT_STATUS_IO = 5,
  MT_STATUS_INSUFFICIENT_DATA = 6,
  MT_STATUS_EPISODE_DONE = 7,
  MT_STATUS_INVALID_ACTION = 8,
  MT_STATUS_RUNTIME = 9,
  MT_STATUS_BUFFER_TOO_SMALL = 10,
  MT_STATUS_PANIC = 11,
} MtStatus;

typedef enum MtAction {
  MT_ACTION_BUY = 0,
  MT_ACTION_HOLD = 1,
  MT_ACTION_SELL = 2,
} MtAction;

typedef enum MtCheckTarget {
  MT_CHECK_TARGET_GMEMN2N = 0,
  MT_CHECK_TARGET_MEMN2N = 1,
  MT_CHECK_TARGET_FCNN = 2,
  MT_CHECK_TARGET_LSTM = 3,
  MT_CHECK_TARGET_ENCODER = 4,
  MT_CHECK_TARGET_TD_LOSS = 5,
} MtCheckTarget;

/**
 * A parsed run configuration.
 */
typedef struct MtConfig MtConfig;

/**
 * A running trading episode.
 */
typedef struct MtEnv MtEnv;

/**
 * A price series.
 */
typedef struct MtSeries MtSeries;

/**
 * Trading environment settings.
 */
typedef struct MtEnvParams {
  size_t horizon;
  size_t window_len;
  double initial_cash;
  double transaction_cost;
  uint32_t max_holdings;
} MtEnvParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len` bytes). Returns the length the full message needs,
 * including the terminator.
 */
size_t mt_last_error(char *buf, size_t len);

/**
 * Default trading settings.
 */
enum MtStatus mt_env_params_default(struct MtEnvParams *out);

/**
 * Generate a series whose next move is a parity function of the last
 * `order` moves.
 */
enum MtStatus mt_series_synthetic(uint32_t order,
                                  size_t length,
                                  double amplitude,
                                  uint64_t seed,
                                  struct MtSeries **out);

/**
 * Read a `date,open` CSV file.
 */
enum MtStatus mt_series_load_csv(const char *path, struct MtSeries **out);

enum MtStatus mt_series_len(const struct MtSeries *series, size_t *out);

/**
 * Copy the prices into `buf`, which must hold at least `mt_series_len` values.
 */
enum MtStatus mt_series_prices(const struct MtSeries *series, double *buf, size_t len);

void mt_series_free(struct MtSeries *series);

/**
 * Best achievable terminal reward of an episode starting on day `start`.
 */
enum MtStatus mt_oracle_profit(const struct MtSeries *series,
                               size_t start,
                               const struct MtEnvParams *params,
                               double *out);

/**
 * Start a trading episode whose first decision is on day `start`.
 */
enum MtStatus mt_env_new(const struct MtSeries *series,
                         size_t start,
                         const struct MtEnvParams *params,
                         struct MtEnv **out);

/**
 * Apply one action. `executed` receives the action actually taken:
 * infeasible orders are turned into Hold.
 */
enum MtStatus mt_env_step(struct MtEnv *env,
                          enum MtAction action,
                          double *reward,
                          bool *done,
                          enum MtAction *executed);

enum MtStatus mt_env_net_worth(const struct MtEnv *env, double *out);

void mt_env_free(struct MtEnv *env);

/**
 * Parse and validate a TOML run configuration. Relative series paths are
 * resolved against the file's directory.
 */
enum MtStatus mt_config_load(const char *path, struct MtConfig **out);

void mt_config_free(struct MtConfig *cfg);

/**
 * Run the benchmark described by `cfg` and return its JSON report in
 * `json`, to be released with [`mt_string_free`].
 */
enum MtStatus mt_bench_run(const struct MtConfig *cfg, char **json);

void mt_string_free(char *s);

/**
 * Finite-difference check of a tiny instance. `max_rel_err` receives the
 * worst relative error over all tensors and `passed` whether it is below 1e-4.
 */
enum MtStatus mt_gradcheck(enum MtCheckTarget target,
                           uint64_t seed,
                           double *max_rel_err,
                           bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMTRADER_H */
