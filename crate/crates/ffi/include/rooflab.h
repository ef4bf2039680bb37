#ifndef ROOFLAB_H
#define ROOFLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RL_LEVEL_L1 0

#define RL_LEVEL_L2 1

#define RL_LEVEL_HBM 2

#define RL_LIMITER_THREADS 0

#define RL_LIMITER_BLOCKS 1

#define RL_LIMITER_REGISTERS 2

/**
 * Complex accumulators per result array.
 */
#define RL_NW 2

typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_NULL_ARGUMENT = 1,
  RL_STATUS_DOMAIN = 2,
  RL_STATUS_INVALID = 3,
  RL_STATUS_LOOKUP = 4,
  RL_STATUS_IO = 5,
  RL_STATUS_PARSE = 6,
  RL_STATUS_USAGE = 7,
  RL_STATUS_BUFFER_TOO_SMALL = 8,
  RL_STATUS_PANIC = 9,
} RlStatus;

/**
 * Opaque machine description.
 */
typedef struct RlMachine RlMachine;

/**
 * Opaque synthetic GPP problem.
 */
typedef struct RlProblem RlProblem;

typedef struct RlOccupancy {
  uint32_t warps;
  uint32_t blocks;
  uint32_t warps_per_block;
  uint32_t regs_per_warp;
  /**
   * One of the `RL_LIMITER_*` values.
   */
  uint32_t limiter;
} RlOccupancy;

typedef struct RlRun {
  uint64_t dadd;
  uint64_t dmul;
  uint64_t dfma;
  uint64_t ddiv;
  uint64_t dother;
  /**
   * dadd + dmul + 2 dfma + ddiv.
   */
  uint64_t flops;
  /**
   * Against the reference evaluation of the same problem.
   */
  double max_rel_error;
  uint32_t registers_per_thread;
  uint32_t threads_per_block;
} RlRun;

typedef struct RlSimOutcome {
  double l1_bytes;
  double l2_bytes;
  double hbm_bytes;
  double l1_hit_rate;
  double l2_hit_rate;
  uint64_t events;
} RlSimOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next rooflab call on this thread.
 */
const char *rl_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void rl_string_free(char *s);

/**
 * # Safety
 * `out` must be null or point to writable memory for one double.
 */
enum RlStatus rl_theoretical_peak(uint32_t num_units,
                                  uint32_t lanes_per_unit,
                                  uint32_t ops_per_lane_cycle,
                                  double clock_hz,
                                  double *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one double.
 */
enum RlStatus rl_fma_adjusted_peak(double peak, double fma_ratio, double *out);

/**
 * # Safety
 * `out` must be null or point to writable memory for one double.
 */
enum RlStatus rl_machine_balance(double peak, double bandwidth, double *out);

/**
 * The bundled V100 description.
 *
 * # Safety
 * `out` must be null or point to writable memory for one handle pointer.
 */
enum RlStatus rl_machine_bundled(struct RlMachine **out);

/**
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` as in [`rl_machine_bundled`].
 */
enum RlStatus rl_machine_load(const char *path, struct RlMachine **out);

/**
 * # Safety
 * `m` must be null or a handle from this library, not yet freed.
 */
void rl_machine_free(struct RlMachine *m);

/**
 * Peak of the highest compute ceiling.
 *
 * # Safety
 * `m` must be a live handle; `out` writable for one double.
 */
enum RlStatus rl_machine_peak(const struct RlMachine *m, double *out);

/**
 * Ridge point of `level` (an `RL_LEVEL_*` code) under the highest ceiling.
 *
 * # Safety
 * `m` must be a live handle; `out` writable for one double.
 */
enum RlStatus rl_machine_level_balance(const struct RlMachine *m, uint32_t level, double *out);

/**
 * min(top peak, ai x bandwidth of `level`).
 *
 * # Safety
 * `m` must be a live handle; `out` writable for one double.
 */
enum RlStatus rl_attainable(const struct RlMachine *m, uint32_t level, double ai, double *out);

/**
 * Theoretical occupancy. `m` may be null for the default SM resources.
 *
 * # Safety
 * `m` must be null or a live handle; `out` writable for one [`RlOccupancy`].
 */
enum RlStatus rl_occupancy(const struct RlMachine *m,
                           uint32_t registers_per_thread,
                           uint32_t threads_per_block,
                           struct RlOccupancy *out);

/**
 * Deterministic synthetic problem for `seed`.
 *
 * # Safety
 * `out` must be null or writable for one handle pointer.
 */
enum RlStatus rl_problem_synth(uint64_t seed,
                               size_t nbands,
                               size_t ngpown,
                               size_t ncouls,
                               struct RlProblem **out);

/**
 * # Safety
 * `p` must be null or a handle from this library, not yet freed.
 */
void rl_problem_free(struct RlProblem *p);

/**
 * Reference evaluation. Writes achtemp then asxtemp as interleaved
 * (re, im) pairs: 4 x `RL_NW` doubles.
 *
 * # Safety
 * `p` must be a live handle and `buf` writable for `len` doubles.
 */
enum RlStatus rl_reference(const struct RlProblem *p, double *buf, size_t len);

/**
 * Runs version `version` (0 to 8). `buf` may be null to skip the result
 * values; otherwise it is filled as in [`rl_reference`].
 *
 * # Safety
 * `p` must be a live handle, `out` writable for one [`RlRun`], and `buf`
 * null or writable for `len` doubles.
 */
enum RlStatus rl_run_version(const struct RlProblem *p,
                             uint32_t version,
                             struct RlRun *out,
                             double *buf,
                             size_t len);

/**
 * Replays a trace file through the cache simulator. `config` is a preset
 * name ("default", "desk") or a JSON file path; null means "desk".
 *
 * # Safety
 * `path` must be a NUL-terminated string, `config` null or one, and `out`
 * writable for one [`RlSimOutcome`].
 */
enum RlStatus rl_simulate_trace(const char *path, const char *config, struct RlSimOutcome *out);

/**
 * Analysis report as JSON for a metrics JSON document. `m` may be null for
 * the bundled machine; a negative `fma_ratio` leaves the FMA-adjusted
 * ceiling out. Free the result with [`rl_string_free`].
 *
 * # Safety
 * `metrics_json` must be a NUL-terminated string, `m` null or a live
 * handle, and `out` writable for one string pointer.
 */
enum RlStatus rl_analyze_json(const char *metrics_json,
                              const struct RlMachine *m,
                              double fma_ratio,
                              char **out);

/**
 * Library version as a static string.
 */
const char *rl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROOFLAB_H */
