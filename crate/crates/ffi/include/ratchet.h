#ifndef RATCHET_H
#define RATCHET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RatchetStatus {
  RATCHET_STATUS_OK = 0,
  RATCHET_STATUS_NULL_POINTER = 1,
  RATCHET_STATUS_INVALID_ARGUMENT = 2,
  RATCHET_STATUS_NON_FINITE = 3,
  RATCHET_STATUS_INCOMPATIBLE = 4,
  RATCHET_STATUS_CHECKPOINT = 5,
  RATCHET_STATUS_IO = 6,
  RATCHET_STATUS_INTERNAL = 7,
} RatchetStatus;

/**
 * Potential shape selector.
 */
typedef enum RatchetPotential {
  RATCHET_POTENTIAL_SMOOTH = 0,
  RATCHET_POTENTIAL_SAWTOOTH = 1,
} RatchetPotential;

/**
 * Handcrafted policies for [`ratchet_evaluate_baseline`]. Parameters `a`
 * and `b` are `(t_on, t_off)` for periodic, `(u_on, u_off)` for threshold
 * and `(x0, unused)` for MND; the others ignore them.
 */
typedef enum RatchetBaseline {
  RATCHET_BASELINE_OFF = 0,
  RATCHET_BASELINE_ON = 1,
  RATCHET_BASELINE_PERIODIC = 2,
  RATCHET_BASELINE_GREEDY = 3,
  RATCHET_BASELINE_THRESHOLD = 4,
  RATCHET_BASELINE_MND = 5,
} RatchetBaseline;

/**
 * A trained policy network loaded from a checkpoint.
 */
typedef struct RatchetPolicy RatchetPolicy;

/**
 * One ensemble member: particles, delay queue and its noise stream.
 */
typedef struct RatchetSim RatchetSim;

/**
 * Ensemble statistics of an evaluation.
 */
typedef struct RatchetReport {
  double current_mean;
  double current_std;
  double std_error;
  size_t ensemble;
} RatchetReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ratchet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ratchet_version(void);

/**
 * Creates ensemble member `member` of the ensemble seeded by `seed`: the
 * same initial positions and noise as the evaluation harness uses.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RatchetStatus ratchet_sim_new(size_t n,
                                   double tau,
                                   enum RatchetPotential potential,
                                   uint64_t seed,
                                   uint64_t member,
                                   struct RatchetSim **out);

/**
 * Releases a simulator; null is ignored.
 *
 * # Safety
 * `sim` must come from [`ratchet_sim_new`] and not be used afterwards.
 */
void ratchet_sim_free(struct RatchetSim *sim);

/**
 * Requests potential state `alpha` (0 off, 1 on) and advances one time
 * step. With a delay the applied state is the one requested `tau` earlier.
 * Writes the mean displacement of the step to `displacement` if non-null.
 *
 * # Safety
 * `sim` must be a live handle; `displacement` may be null.
 */
enum RatchetStatus ratchet_sim_step(struct RatchetSim *sim, uint8_t alpha, double *displacement);

/**
 * Particle count of `sim`.
 *
 * # Safety
 * `sim` must be a live handle and `n` writable.
 */
enum RatchetStatus ratchet_sim_n(const struct RatchetSim *sim, size_t *n);

/**
 * Elapsed simulated time.
 *
 * # Safety
 * `sim` must be a live handle and `t` writable.
 */
enum RatchetStatus ratchet_sim_time(const struct RatchetSim *sim, double *t);

/**
 * Copies the (unwrapped) particle positions into `buf`, which must hold
 * `len >= n` values.
 *
 * # Safety
 * `sim` must be a live handle and `buf` valid for `len` writes.
 */
enum RatchetStatus ratchet_sim_positions(const struct RatchetSim *sim, double *buf, size_t len);

/**
 * Greedy decision for the current state: 1 when the mean force is
 * positive.
 *
 * # Safety
 * `sim` must be a live handle and `alpha` writable.
 */
enum RatchetStatus ratchet_sim_greedy(const struct RatchetSim *sim, uint8_t *alpha);

/**
 * Mean force `(1/N) Σ F(x_i)` of the potential at `positions`.
 *
 * # Safety
 * `positions` must be valid for `n` reads and `force` writable.
 */
enum RatchetStatus ratchet_mean_force(const double *positions,
                                      size_t n,
                                      enum RatchetPotential potential,
                                      double *force);

/**
 * Loads a policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RatchetStatus ratchet_policy_load(const char *path, struct RatchetPolicy **out);

/**
 * Releases a policy; null is ignored.
 *
 * # Safety
 * `policy` must come from [`ratchet_policy_load`] and not be used
 * afterwards.
 */
void ratchet_policy_free(struct RatchetPolicy *policy);

/**
 * Probability of switching on in the current state of `sim`.
 *
 * # Safety
 * Both handles must be live and `p_on` writable.
 */
enum RatchetStatus ratchet_policy_p_on(const struct RatchetPolicy *policy,
                                       const struct RatchetSim *sim,
                                       double *p_on);

/**
 * Ensemble current of a handcrafted policy; identical to the command line
 * `simulate` for the same inputs.
 *
 * # Safety
 * `report` must be writable.
 */
enum RatchetStatus ratchet_evaluate_baseline(enum RatchetBaseline kind,
                                             double a,
                                             double b,
                                             size_t n,
                                             double tau,
                                             enum RatchetPotential potential,
                                             double duration,
                                             size_t ensemble,
                                             uint64_t seed,
                                             struct RatchetReport *report);

/**
 * Ensemble current of a trained policy acting deterministically.
 *
 * # Safety
 * `policy` must be a live handle and `report` writable.
 */
enum RatchetStatus ratchet_evaluate_policy(const struct RatchetPolicy *policy,
                                           size_t n,
                                           double tau,
                                           enum RatchetPotential potential,
                                           double duration,
                                           size_t ensemble,
                                           uint64_t seed,
                                           struct RatchetReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATCHET_H */
