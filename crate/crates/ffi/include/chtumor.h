#ifndef CHTUMOR_H
#define CHTUMOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChtStatus {
  CHT_STATUS_OK = 0,
  CHT_STATUS_NULL_POINTER = 1,
  CHT_STATUS_INVALID_ARGUMENT = 2,
  CHT_STATUS_CONFIG = 3,
  CHT_STATUS_SOLVER = 4,
  CHT_STATUS_STEP_REJECTED = 5,
  CHT_STATUS_BUFFER_TOO_SMALL = 6,
  CHT_STATUS_PANIC = 7,
} ChtStatus;

/*
 Opaque simulation handle.
 */
typedef struct ChtSim ChtSim;

/*
 Scalar diagnostics of the current state.
 */
typedef struct ChtEnergy {
  double t;
  double dt_used;
  double energy;
  double mass;
  double phi_min;
  double phi_max;
  /*
   `D_mu + D_N + D_exchange` of the last step.
   */
  double dissipation;
} ChtEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Null-terminated crate version; static storage.
 */
const char *cht_version(void);

/*
 Copies the last error message of this thread into `buf` (truncated,
 always terminated when `cap > 0`). Returns the full length including
 the terminator.

 # Safety
 `buf` must be null or point to `cap` writable bytes.
 */
size_t cht_last_error(char *buf, size_t cap);

/*
 Simulation with the default configuration and the given seed.

 # Safety
 `out` must be a valid pointer to a handle slot.
 */
enum ChtStatus cht_sim_new_default(uint64_t seed, struct ChtSim **out);

/*
 Simulation from a TOML run configuration.

 # Safety
 `toml` must be a null-terminated UTF-8 string and `out` a valid pointer.
 */
enum ChtStatus cht_sim_new_from_toml(const char *toml, struct ChtSim **out);

/*
 # Safety
 `sim` must be null or a handle from this library, not yet freed.
 */
void cht_sim_free(struct ChtSim *sim);

/*
 Advances by `duration` in steps of the configured `dt`.

 # Safety
 `sim` must be a live handle.
 */
enum ChtStatus cht_sim_advance(struct ChtSim *sim, double duration);

/*
 Takes `n` steps of the configured `dt`.

 # Safety
 `sim` must be a live handle.
 */
enum ChtStatus cht_sim_step(struct ChtSim *sim, uint64_t n);

/*
 # Safety
 `sim` must be a live handle and `out` valid for writes.
 */
enum ChtStatus cht_sim_energy(struct ChtSim *sim, struct ChtEnergy *out);

/*
 Number of grid nodes per field, 0 for a null handle.

 # Safety
 `sim` must be null or a live handle.
 */
size_t cht_sim_len(const struct ChtSim *sim);

/*
 Copies the nodal values (row-major) into caller buffers of `cap` doubles.

 # Safety
 `phi` and `sigma` must point to `cap` writable doubles.
 */
enum ChtStatus cht_sim_copy_fields(struct ChtSim *sim, double *phi, double *sigma, size_t cap);

/*
 Replaces the state (time is kept) with `len` row-major values per field.

 # Safety
 `phi` and `sigma` must point to `len` readable doubles.
 */
enum ChtStatus cht_sim_set_fields(struct ChtSim *sim,
                                  const double *phi,
                                  const double *sigma,
                                  size_t len);

/*
 Constant stationary states `phi = c` at mean mass `m` for the default
 potential and proliferation. Writes up to `cap` roots, ascending, and
 their total number to `count`.

 # Safety
 `out` must point to `cap` writable doubles and `count` be valid.
 */
enum ChtStatus cht_constant_roots(double m,
                                  double chi_phi,
                                  double chi_sigma,
                                  double *out,
                                  size_t cap,
                                  size_t *count);

/*
 Largest eigenvalue of the linearised 2x2 block for eigenvalue `lambda`.

 # Safety
 `out` must be valid for writes.
 */
enum ChtStatus cht_mode_abscissa(double lambda,
                                 double chi_phi,
                                 double chi_sigma,
                                 double r1,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHTUMOR_H */
