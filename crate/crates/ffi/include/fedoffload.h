#ifndef FEDOFFLOAD_H
#define FEDOFFLOAD_H

/* Generated by cbindgen from the fedoffload-ffi crate. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FoStatus {
  FO_STATUS_OK = 0,
  FO_STATUS_NULL_POINTER = 1,
  FO_STATUS_INVALID_ARGUMENT = 2,
  FO_STATUS_INVALID_ACTION = 3,
  FO_STATUS_INFEASIBLE = 4,
  FO_STATUS_DEADLINE_EXCEEDED = 5,
  FO_STATUS_VALIDATION = 6,
  FO_STATUS_PARSE = 7,
  FO_STATUS_IO = 8,
  FO_STATUS_NON_FINITE = 9,
  FO_STATUS_INTERNAL = 99,
} FoStatus;

/**
 * Opaque simulated device.
 */
typedef struct FoEnv FoEnv;

/**
 * Observable state. `gains` holds `num_edge_nodes` values owned by the
 * handle; it stays valid until the next step or free.
 */
typedef struct FoState {
  size_t task_queue;
  size_t energy_queue;
  /**
   * Associated edge node, 1-based.
   */
  size_t association;
  size_t num_edge_nodes;
  const double *gains;
} FoState;

/**
 * Result of one epoch.
 */
typedef struct FoOutcome {
  double delay;
  double handover;
  double transmission;
  size_t queuing;
  size_t drops;
  double payment;
  bool completed;
  size_t energy_units_spent;
  double utility;
} FoOutcome;

/**
 * Summary of a finished experiment.
 */
typedef struct FoSummary {
  double final_window_mean_utility;
  double final_window_std;
  double energy_per_epoch_mean;
  double drops_per_epoch_mean;
  size_t rows;
} FoSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *fo_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fo_version(void);

/**
 * Creates a device environment.
 *
 * `system_toml` holds `[system]` keys (e.g. `"p_t = 0.9\nq_e_max = 6"`) or
 * is null for the defaults. Streams are derived from `seed` and `device_id`
 * exactly as in full experiments.
 *
 * # Safety
 * `system_toml` must be null or NUL-terminated; `out` must be writable.
 */
enum FoStatus fo_env_new(const char *system_toml,
                         uint64_t seed,
                         size_t device_id,
                         struct FoEnv **out);

/**
 * Releases an environment; null is ignored.
 *
 * # Safety
 * `env` must come from [`fo_env_new`] and not be used afterwards.
 */
void fo_env_free(struct FoEnv *env);

/**
 * Reads the current state.
 *
 * # Safety
 * `env` must be a live handle and `out` writable.
 */
enum FoStatus fo_env_state(const struct FoEnv *env, struct FoState *out);

/**
 * Advances one epoch with offloading target `offload` (0 = local) and
 * `energy` units. `out` may be null.
 *
 * # Safety
 * `env` must be a live handle; `out` null or writable.
 */
enum FoStatus fo_env_step(struct FoEnv *env, size_t offload, size_t energy, struct FoOutcome *out);

/**
 * Local execution delay of the default task for `energy_joules`.
 *
 * # Safety
 * `system_toml` null or NUL-terminated; `out` writable.
 */
enum FoStatus fo_local_exec_delay(const char *system_toml, double energy_joules, double *out);

/**
 * Transmission time of one task with `energy_joules` over a link of `gain`
 * under `interference`, leaving `handover_seconds` of the epoch unused.
 *
 * # Safety
 * `system_toml` null or NUL-terminated; `out` writable.
 */
enum FoStatus fo_transmission_time(const char *system_toml,
                                   double energy_joules,
                                   double gain,
                                   double interference,
                                   double handover_seconds,
                                   double *out);

/**
 * Exact 0/1 knapsack. On success `out_value` holds the optimum and
 * `out_chosen[k]` is 1 for chosen tasks and 0 otherwise.
 *
 * # Safety
 * `utilities` and `costs` must hold `n` values; `out_chosen` must have room
 * for `n` bytes; `out_value` writable.
 */
enum FoStatus fo_knapsack_optimal(const double *utilities,
                                  const size_t *costs,
                                  size_t n,
                                  size_t budget,
                                  double *out_value,
                                  uint8_t *out_chosen);

/**
 * Runs the experiment described by the configuration file at `config_path`,
 * writing its artifacts. `seed_override` replaces the configured seed when
 * `use_seed_override` is true. `out` may be null.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` null or writable.
 */
enum FoStatus fo_run_experiment(const char *config_path,
                                bool use_seed_override,
                                uint64_t seed_override,
                                struct FoSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDOFFLOAD_H */
