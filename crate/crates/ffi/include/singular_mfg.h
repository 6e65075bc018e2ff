#ifndef SINGULAR_MFG_H
#define SINGULAR_MFG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the nonzero values match the `smfg` exit codes where they overlap.
typedef enum SmfgStatus {
  SMFG_STATUS_OK = 0,
  SMFG_STATUS_IO = 1,
  SMFG_STATUS_VALIDATION = 2,
  SMFG_STATUS_NON_CONVERGENCE = 3,
  SMFG_STATUS_SINGULARITY = 4,
  SMFG_STATUS_NULL_POINTER = 5,
  SMFG_STATUS_BUFFER_TOO_SMALL = 6,
  SMFG_STATUS_PANIC = 7,
} SmfgStatus;

// Opaque stationary solution.
typedef struct SmfgStationary SmfgStationary;

// Opaque time-dependent solution.
typedef struct SmfgTime SmfgTime;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *smfg_last_error(void);

// Library version as a static NUL-terminated string.
const char *smfg_version(void);

// Threshold on the singularity exponent for dimension `d` and growth
// `gamma`; writes `INFINITY` when no finite threshold exists.
//
// # Safety
// `out` must be null or writable.
enum SmfgStatus smfg_alpha_threshold(uint32_t d, double gamma, double *out);

// Solves the stationary problem along the config's eps schedule and keeps
// the last stage.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum SmfgStatus smfg_stationary_solve(const char *config_json, struct SmfgStationary **out);

// Number of grid nodes.
//
// # Safety
// `h` must be null or a live handle.
size_t smfg_stationary_len(const struct SmfgStationary *h);

// # Safety
// `h` must be a live handle and `out` writable.
enum SmfgStatus smfg_stationary_hbar(const struct SmfgStationary *h, double *out);

// Copies `u` (row-major) into `buf`, which must hold `smfg_stationary_len` values.
//
// # Safety
// `h` must be a live handle; `buf` must point to `len` writable doubles.
enum SmfgStatus smfg_stationary_copy_u(const struct SmfgStationary *h, double *buf, size_t len);

// Copies `m` (row-major) into `buf`.
//
// # Safety
// As [`smfg_stationary_copy_u`].
enum SmfgStatus smfg_stationary_copy_m(const struct SmfgStationary *h, double *buf, size_t len);

// Estimate report as JSON; release with [`smfg_string_free`].
//
// # Safety
// `h` must be a live handle and `out` writable.
enum SmfgStatus smfg_stationary_report_json(const struct SmfgStationary *h, char **out);

// # Safety
// `h` must be null or a handle from [`smfg_stationary_solve`] not yet freed.
void smfg_stationary_free(struct SmfgStationary *h);

// Solves the time-dependent problem along the eps schedule and keeps the
// last stage.
//
// # Safety
// As [`smfg_stationary_solve`].
enum SmfgStatus smfg_time_solve(const char *config_json, struct SmfgTime **out);

// Number of time steps; slices are indexed `0..=nt`.
//
// # Safety
// `h` must be null or a live handle.
size_t smfg_time_nt(const struct SmfgTime *h);

// Number of grid nodes per slice.
//
// # Safety
// `h` must be null or a live handle.
size_t smfg_time_len(const struct SmfgTime *h);

// Copies `u(·, t_k)` into `buf`.
//
// # Safety
// `h` must be a live handle; `buf` must point to `len` writable doubles.
enum SmfgStatus smfg_time_copy_u(const struct SmfgTime *h, size_t k, double *buf, size_t len);

// Copies `m(·, t_k)` into `buf`.
//
// # Safety
// As [`smfg_time_copy_u`].
enum SmfgStatus smfg_time_copy_m(const struct SmfgTime *h, size_t k, double *buf, size_t len);

// Estimate report as JSON; release with [`smfg_string_free`].
//
// # Safety
// `h` must be a live handle and `out` writable.
enum SmfgStatus smfg_time_report_json(const struct SmfgTime *h, char **out);

// # Safety
// `h` must be null or a handle from [`smfg_time_solve`] not yet freed.
void smfg_time_free(struct SmfgTime *h);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library, not yet freed.
void smfg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINGULAR_MFG_H */
