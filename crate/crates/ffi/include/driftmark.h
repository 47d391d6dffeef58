#ifndef DRIFTMARK_H
#define DRIFTMARK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes returned by every fallible function.
typedef enum DmStatus {
  DM_STATUS_OK = 0,
  DM_STATUS_NULL_POINTER = 1,
  DM_STATUS_INVALID_PARAMETER = 2,
  DM_STATUS_DIMENSION_MISMATCH = 3,
  DM_STATUS_STEP_OUT_OF_RANGE = 4,
  DM_STATUS_INSUFFICIENT_DATA = 5,
  DM_STATUS_IO = 6,
  DM_STATUS_JSON = 7,
  DM_STATUS_INVALID_UTF8 = 8,
  DM_STATUS_CELL = 9,
  DM_STATUS_PANIC = 10,
} DmStatus;

typedef enum DmPreset {
  DM_PRESET_Q = 0,
  DM_PRESET_R = 1,
} DmPreset;

// Reverse sampler selector for [`dm_sample`].
typedef enum DmSampler {
  // Uses the `eta` argument.
  DM_SAMPLER_DDIM = 0,
  DM_SAMPLER_ANCESTRAL = 1,
  DM_SAMPLER_EM_SDE = 2,
  DM_SAMPLER_PF_ODE = 3,
} DmSampler;

typedef struct DmCodebook DmCodebook;

typedef struct DmInjection DmInjection;

typedef struct DmOracle DmOracle;

typedef struct DmSchedule DmSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or NULL. The
// pointer stays valid until the next failing call on the same thread.
const char *dm_last_error(void);

// Library version as a static NUL-terminated string.
const char *dm_version(void);

// Linear β schedule with `steps` steps.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DmStatus dm_schedule_new_linear(size_t steps,
                                     double beta_min,
                                     double beta_max,
                                     struct DmSchedule **out);

// Linear schedule whose β range is rescaled to the step count.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum DmStatus dm_schedule_new_scaled_linear(size_t steps, struct DmSchedule **out);

// # Safety
// `json` must be a NUL-terminated string; `out` as above.
enum DmStatus dm_schedule_from_json(const char *json, struct DmSchedule **out);

// # Safety
// `s` must be NULL or a handle from a `dm_schedule_*` constructor, freed once.
void dm_schedule_free(struct DmSchedule *s);

// Number of steps, or 0 for NULL.
//
// # Safety
// `s` must be NULL or a live schedule handle.
size_t dm_schedule_steps(const struct DmSchedule *s);

// # Safety
// `s` must be a live schedule handle and `out` writable.
enum DmStatus dm_schedule_alpha_bar(const struct DmSchedule *s, size_t t, double *out);

// `λ·√ᾱ_t/√(1−ᾱ_t)`.
//
// # Safety
// `s` must be a live schedule handle and `out` writable.
enum DmStatus dm_schedule_modulation_coeff(const struct DmSchedule *s,
                                           size_t t,
                                           double lambda,
                                           double *out);

// Seeded isotropic Gaussian mixture with equal weights.
//
// # Safety
// `out` must be writable.
enum DmStatus dm_oracle_new_mixture(size_t dim,
                                    size_t n_components,
                                    double mean_norm,
                                    double variance,
                                    uint64_t seed,
                                    struct DmOracle **out);

// # Safety
// `json` must be a NUL-terminated string; `out` writable.
enum DmStatus dm_oracle_from_json(const char *json, struct DmOracle **out);

// # Safety
// `o` must be NULL or an oracle handle, freed once.
void dm_oracle_free(struct DmOracle *o);

// Latent dimension, or 0 for NULL.
//
// # Safety
// `o` must be NULL or a live oracle handle.
size_t dm_oracle_dim(const struct DmOracle *o);

// Exact score `∇ log p_t(z)` written to `out[0..len]`.
//
// # Safety
// Handles must be live; `z` and `out` must hold `len` doubles.
enum DmStatus dm_oracle_score(const struct DmOracle *o,
                              const struct DmSchedule *s,
                              const double *z,
                              size_t len,
                              size_t t,
                              double *out);

// Posterior mean `E[z_0 | z_t]` written to `out[0..len]`.
//
// # Safety
// As for [`dm_oracle_score`].
enum DmStatus dm_oracle_posterior_mean(const struct DmOracle *o,
                                       const struct DmSchedule *s,
                                       const double *z,
                                       size_t len,
                                       size_t t,
                                       double *out);

// `k` orthonormal carriers in `R^d` with amplitude `alpha`.
//
// # Safety
// `out` must be writable.
enum DmStatus dm_codebook_new(size_t dim,
                              size_t bits,
                              double alpha,
                              uint64_t seed,
                              struct DmCodebook **out);

// # Safety
// `cb` must be NULL or a codebook handle, freed once.
void dm_codebook_free(struct DmCodebook *cb);

// Residual for a message given as one byte per bit (non-zero = 1).
//
// # Safety
// `bits` must hold `n_bits` bytes and `out` must hold `dim` doubles.
enum DmStatus dm_codebook_encode(const struct DmCodebook *cb,
                                 const uint8_t *bits,
                                 size_t n_bits,
                                 double *out,
                                 size_t dim);

// Decoded bits, one byte per bit.
//
// # Safety
// `z` must hold `dim` doubles and `bits_out` must hold `n_bits` bytes.
enum DmStatus dm_codebook_decode(const struct DmCodebook *cb,
                                 const double *z,
                                 size_t dim,
                                 uint8_t *bits_out,
                                 size_t n_bits);

// Mean signed carrier margin of `z` for the expected message, in units of
// the amplitude.
//
// # Safety
// `z` must hold `dim` doubles, `bits` `n_bits` bytes, `out` one double.
enum DmStatus dm_codebook_detection_stat(const struct DmCodebook *cb,
                                         const double *z,
                                         size_t dim,
                                         const uint8_t *bits,
                                         size_t n_bits,
                                         double *out);

// Injection of `delta` with strength `lambda` over `t ∈ [t_start, t_end]`.
//
// # Safety
// `delta` must hold `dim` doubles; `out` writable.
enum DmStatus dm_injection_new(const double *delta,
                               size_t dim,
                               double lambda,
                               size_t t_start,
                               size_t t_end,
                               struct DmInjection **out);

// Quality (Q) or robustness (R) preset scaled to the schedule length.
//
// # Safety
// `s` must be a live schedule; `delta` must hold `dim` doubles; `out` writable.
enum DmStatus dm_injection_new_preset(enum DmPreset preset,
                                      const struct DmSchedule *s,
                                      const double *delta,
                                      size_t dim,
                                      struct DmInjection **out);

// # Safety
// `cfg` must be NULL or an injection handle, freed once.
void dm_injection_free(struct DmInjection *cfg);

// Window bounds and strength of an injection.
//
// # Safety
// All pointers must be valid.
enum DmStatus dm_injection_params(const struct DmInjection *cfg,
                                  size_t *t_start,
                                  size_t *t_end,
                                  double *lambda);

// Corrected noise prediction at step `t`.
//
// # Safety
// Handles must be live; `eps` and `out` must hold `dim` doubles.
enum DmStatus dm_corrected_eps(const struct DmInjection *cfg,
                               const struct DmSchedule *s,
                               const double *eps,
                               size_t dim,
                               size_t t,
                               double *out);

// Draws `z_T` from `seed` and integrates to `t = 0`, writing the clean
// latent to `out`. `cfg` may be NULL for an uninjected run; `eta` is read
// only for DDIM.
//
// # Safety
// Handles must be live (`cfg` may be NULL); `out` must hold `dim` doubles.
enum DmStatus dm_sample(enum DmSampler sampler,
                        double eta,
                        const struct DmOracle *o,
                        const struct DmSchedule *s,
                        size_t steps,
                        const struct DmInjection *cfg,
                        uint64_t seed,
                        double *out,
                        size_t dim);

// Runs the experiment matrix described by a JSON configuration (an empty
// object selects the defaults) and returns the metrics CSV in a newly
// allocated string to be released with [`dm_string_free`].
//
// # Safety
// `config_json` must be a NUL-terminated string; `csv_out` writable.
enum DmStatus dm_run_suite(const char *config_json, char **csv_out);

// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void dm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTMARK_H */
