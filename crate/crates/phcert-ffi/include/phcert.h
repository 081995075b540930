#ifndef PHCERT_H
#define PHCERT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
#define PHCERT_OK 0

/**
 * A pointer argument was null or an array length was inconsistent.
 */
#define PHCERT_ERR_ARGUMENT 1

/**
 * The problem is well-formed but no certificate exists on the region.
 */
#define PHCERT_ERR_INFEASIBLE 2

/**
 * A numerical failure (singular matrix, integration blow-up, ...).
 */
#define PHCERT_ERR_NUMERIC 3

/**
 * An internal panic was caught at the boundary.
 */
#define PHCERT_ERR_INTERNAL 4

/**
 * Opaque certificate handle.
 */
typedef struct PhcertCertificate PhcertCertificate;

/**
 * Opaque gain-set handle.
 */
typedef struct PhcertGains PhcertGains;

/**
 * Opaque mechanical-system handle.
 */
typedef struct PhcertSystem PhcertSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf` as a
 * NUL-terminated string, truncating to `len` bytes. Returns the full
 * message length (excluding the NUL). Safe to call with a null buffer to
 * query the required size.
 */
uintptr_t phcert_last_error_message(char *buf, uintptr_t len);

/**
 * Builds a builtin model (`pera`, `pendulum`, or `msd1`). Returns null on
 * error; the message is available via [`phcert_last_error_message`].
 */
struct PhcertSystem *phcert_system_new_builtin(const char *name);

/**
 * Degrees of freedom of the model, or 0 for a null handle.
 */
uintptr_t phcert_system_dof(const struct PhcertSystem *sys);

void phcert_system_free(struct PhcertSystem *sys);

/**
 * Builds a diagonal PID gain set. `kp`, `ki`, `kd` carry `m` entries and
 * `q_star` carries `n` entries. Returns null on error.
 */
struct PhcertGains *phcert_gains_new_diagonal(uintptr_t m,
                                              const double *kp,
                                              const double *ki,
                                              const double *kd,
                                              uintptr_t n,
                                              const double *q_star);

void phcert_gains_free(struct PhcertGains *gains);

/**
 * Closes the loop, transforms to canonical coordinates, and searches for a
 * decay-rate certificate on the box |q| <= `q_radius`, |p| <= `p_radius`
 * (uniform per axis) with `grid_points` samples per axis (0 for the
 * default). On success writes a new handle through `out`.
 */
int32_t phcert_certify(const struct PhcertSystem *sys,
                       const struct PhcertGains *gains,
                       double q_radius,
                       double p_radius,
                       uintptr_t grid_points,
                       struct PhcertCertificate **out);

void phcert_certificate_free(struct PhcertCertificate *cert);

/**
 * Integrates the closed loop from `(q0, p0)` (each `n` entries) with
 * fixed-step RK4 and writes the final configuration error `|q(T) - q*|`
 * through `out_final_error`.
 */
int32_t phcert_simulate_final_error(const struct PhcertSystem *sys,
                                    const struct PhcertGains *gains,
                                    const double *q0,
                                    const double *p0,
                                    double horizon,
                                    double step,
                                    double *out_final_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHCERT_H */
