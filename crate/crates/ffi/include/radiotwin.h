#ifndef RADIOTWIN_H
#define RADIOTWIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. The CLI exit codes are a subset (2, 3, 4).
 */
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_ARGUMENT = 1,
  RT_STATUS_CONFIG = 2,
  RT_STATUS_INFEASIBLE = 3,
  RT_STATUS_NUMERICAL = 4,
  RT_STATUS_IO = 5,
  RT_STATUS_FORMAT = 6,
  RT_STATUS_SHAPE = 7,
  RT_STATUS_BUFFER_TOO_SMALL = 8,
  RT_STATUS_PANIC = 9,
} RtStatus;

typedef enum RtReplayMode {
  RT_REPLAY_MODE_UNIFORM = 0,
  RT_REPLAY_MODE_LARS = 1,
} RtReplayMode;

/*
 Trained radio field.
 */
typedef struct RtGrf RtGrf;

/*
 Min-energy MAC problem.
 */
typedef struct RtProblem RtProblem;

/*
 Reservoir of 64-bit sample ids.
 */
typedef struct RtReplay RtReplay;

/*
 Solved precoder.
 */
typedef struct RtSolution RtSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `cap`). Returns the full message length in bytes.

 # Safety
 `buf` must point to `cap` writable bytes or be null.
 */
size_t rt_last_error(char *buf, size_t cap);

/*
 Single-antenna, single-tone problem with channel power gains `gains`.

 # Safety
 `gains`, `b_min` and `weights` point to `users` doubles; `out` is writable.
 */
enum RtStatus rt_problem_new_siso(size_t users,
                                  const double *gains,
                                  const double *b_min,
                                  const double *weights,
                                  double noise_var,
                                  struct RtProblem **out);

/*
 General problem. `channels` holds, for each user then each tone, an
 `rx_dim × tx_dims[u]` row-major complex matrix as interleaved doubles.

 # Safety
 `tx_dims`, `b_min` and `weights` point to `users` values; `channels`
 points to `channels_len` doubles; `out` is writable.
 */
enum RtStatus rt_problem_new(size_t users,
                             size_t tones,
                             size_t rx_dim,
                             const size_t *tx_dims,
                             const double *channels,
                             size_t channels_len,
                             double noise_var,
                             const double *b_min,
                             const double *weights,
                             struct RtProblem **out);

/*
 Loads a problem file written by the library or the CLI.

 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
enum RtStatus rt_problem_load(const char *path, struct RtProblem **out);

/*
 # Safety
 `problem` comes from `rt_problem_*` and is not used afterwards.
 */
void rt_problem_free(struct RtProblem *problem);

/*
 Solves with default solver settings.

 # Safety
 `problem` is a live handle; `out` is writable.
 */
enum RtStatus rt_solve(const struct RtProblem *problem, struct RtSolution **out);

/*
 Weighted transmit energy of the solution; NaN for a null handle.

 # Safety
 `solution` is a live handle or null.
 */
double rt_solution_objective(const struct RtSolution *solution);

/*
 Per-user rates (bits per use, summed over tones). `len_out` receives
 the user count even when the buffer is too small.

 # Safety
 `out` points to `cap` doubles; `len_out` is writable or null.
 */
enum RtStatus rt_solution_rates(const struct RtSolution *solution,
                                double *out,
                                size_t cap,
                                size_t *len_out);

/*
 Recovered decoding order, first decoded first.

 # Safety
 `out` points to `cap` values; `len_out` is writable or null.
 */
enum RtStatus rt_solution_order(const struct RtSolution *solution,
                                size_t *out,
                                size_t cap,
                                size_t *len_out);

/*
 Covariance of one user on one tone, row-major interleaved.

 # Safety
 `out` points to `cap` doubles; `len_out` is writable or null.
 */
enum RtStatus rt_solution_covariance(const struct RtSolution *solution,
                                     size_t user,
                                     size_t tone,
                                     double *out,
                                     size_t cap,
                                     size_t *len_out);

/*
 # Safety
 `solution` comes from `rt_solve` and is not used afterwards.
 */
void rt_solution_free(struct RtSolution *solution);

/*
 Loads a GRF checkpoint.

 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
enum RtStatus rt_grf_load(const char *path, struct RtGrf **out);

/*
 Antenna counts of the rendered channel.

 # Safety
 `model` is a live handle; `nt`, `nr` are writable.
 */
enum RtStatus rt_grf_shape(const struct RtGrf *model, size_t *nt, size_t *nr);

/*
 Renders the `N_t × N_r` channel between two points, row-major
 interleaved.

 # Safety
 `tx` and `rx` point to 3 doubles; `out` to `cap` doubles.
 */
enum RtStatus rt_grf_render(const struct RtGrf *model,
                            const double *tx,
                            const double *rx,
                            double *out,
                            size_t cap,
                            size_t *len_out);

/*
 # Safety
 `model` comes from `rt_grf_load` and is not used afterwards.
 */
void rt_grf_free(struct RtGrf *model);

/*
 # Safety
 `out` is writable.
 */
enum RtStatus rt_replay_new(size_t capacity,
                            enum RtReplayMode mode,
                            double epsilon,
                            uint64_t seed,
                            struct RtReplay **out);

/*
 Offers a sample. `victim_out` receives the replaced slot, the new slot
 index when appended, or -1 when the sample was discarded.

 # Safety
 `buffer` is a live handle; `victim_out` is writable or null.
 */
enum RtStatus rt_replay_insert(struct RtReplay *buffer,
                               uint64_t id,
                               double loss,
                               int64_t *victim_out);

/*
 Updates the stored loss of slot `index`.

 # Safety
 `buffer` is a live handle.
 */
enum RtStatus rt_replay_set_loss(struct RtReplay *buffer, size_t index, double loss);

/*
 Stored sample count; 0 for a null handle.

 # Safety
 `buffer` is a live handle or null.
 */
size_t rt_replay_len(const struct RtReplay *buffer);

/*
 Samples offered so far; 0 for a null handle.

 # Safety
 `buffer` is a live handle or null.
 */
uint64_t rt_replay_seen(const struct RtReplay *buffer);

/*
 Stored ids in slot order.

 # Safety
 `out` points to `cap` values; `len_out` is writable or null.
 */
enum RtStatus rt_replay_ids(const struct RtReplay *buffer,
                            uint64_t *out,
                            size_t cap,
                            size_t *len_out);

/*
 Current eviction probability of every slot.

 # Safety
 `out` points to `cap` doubles; `len_out` is writable or null.
 */
enum RtStatus rt_replay_victim_probabilities(const struct RtReplay *buffer,
                                             double *out,
                                             size_t cap,
                                             size_t *len_out);

/*
 # Safety
 `buffer` comes from `rt_replay_new` and is not used afterwards.
 */
void rt_replay_free(struct RtReplay *buffer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADIOTWIN_H */
