#ifndef SPINECHO_H
#define SPINECHO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SpinechoStatus {
  SPINECHO_STATUS_OK = 0,
  SPINECHO_STATUS_INVALID_ARGUMENT = 1,
  SPINECHO_STATUS_NULL_POINTER = 2,
  SPINECHO_STATUS_PARSE = 3,
  SPINECHO_STATUS_IO = 4,
  /**
   * The fit ran but did not converge; the result handle is still set.
   */
  SPINECHO_STATUS_NOT_CONVERGED = 5,
  SPINECHO_STATUS_PANIC = 6,
} SpinechoStatus;

/**
 * Orientation grid for powder averages.
 */
typedef enum SpinechoGrid {
  /**
   * Golden-angle spiral, `n²` points.
   */
  SPINECHO_GRID_SPIRAL = 0,
  /**
   * Gauss-Legendre in cos θ times `n` uniform φ values.
   */
  SPINECHO_GRID_PRODUCT = 1,
} SpinechoGrid;

/**
 * Decay model for [`spinecho_fit_decay`].
 */
typedef enum SpinechoDecayModel {
  SPINECHO_DECAY_MODEL_MONO_EXPONENTIAL = 0,
  SPINECHO_DECAY_MODEL_MODULATED_DECAY = 1,
} SpinechoDecayModel;

typedef struct SpinechoFitResult SpinechoFitResult;

typedef struct SpinechoSpectrum SpinechoSpectrum;

typedef struct SpinechoSystem SpinechoSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *spinecho_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spinecho_version(void);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void spinecho_string_free(char *s);

/**
 * Create a spin system. `spin` is S (0.5, 1, 1.5, ...).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SpinechoStatus spinecho_system_new(double spin,
                                        double g,
                                        double d_ghz,
                                        double e_ghz,
                                        struct SpinechoSystem **out);

/**
 * # Safety
 * `sys` must come from [`spinecho_system_new`] or be null.
 */
void spinecho_system_free(struct SpinechoSystem *sys);

/**
 * Echo-detected powder spectrum with Gaussian broadening `sigma_t` on
 * `points` fields from `field_start_t` to `field_stop_t`. The grid has
 * `grid_n²` orientations.
 *
 * # Safety
 * `sys` must be a live handle and `out` a valid pointer.
 */
enum SpinechoStatus spinecho_spectrum_simulate(const struct SpinechoSystem *sys,
                                               double mw_ghz,
                                               double sigma_t,
                                               enum SpinechoGrid grid,
                                               size_t grid_n,
                                               double field_start_t,
                                               double field_stop_t,
                                               size_t points,
                                               struct SpinechoSpectrum **out);

/**
 * Number of field points, or 0 for a null handle.
 *
 * # Safety
 * `spec` must be a live handle or null.
 */
size_t spinecho_spectrum_len(const struct SpinechoSpectrum *spec);

/**
 * Copy the field axis (T) and amplitude into caller buffers of `len`
 * elements; `len` must equal [`spinecho_spectrum_len`]. Either buffer may
 * be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold `len` doubles.
 */
enum SpinechoStatus spinecho_spectrum_copy(const struct SpinechoSpectrum *spec,
                                           double *field_t,
                                           double *amplitude,
                                           size_t len);

/**
 * # Safety
 * `spec` must come from [`spinecho_spectrum_simulate`] or be null.
 */
void spinecho_spectrum_free(struct SpinechoSpectrum *spec);

/**
 * Hahn-echo decay `exp(−2τ/T2)·V(τ)` at `n` delays. ESEEM from one
 * nucleus is included when `eseem_k > 0` (`gamma_mhz_per_t`, `spin_i` and
 * `field_t` describe it), averaged over a detection window of `window_ns`.
 *
 * # Safety
 * `taus_ns` and `out_amplitude` must hold `n` doubles.
 */
enum SpinechoStatus spinecho_hahn_decay(const double *taus_ns,
                                        size_t n,
                                        double t1_ns,
                                        double t2_ns,
                                        double eseem_k,
                                        double gamma_mhz_per_t,
                                        double spin_i,
                                        double field_t,
                                        double window_ns,
                                        double *out_amplitude);

/**
 * Fit a decay trace (delays in ns).
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` must be valid.
 */
enum SpinechoStatus spinecho_fit_decay(const double *x,
                                       const double *y,
                                       size_t n,
                                       enum SpinechoDecayModel model,
                                       bool second_harmonic,
                                       struct SpinechoFitResult **out);

/**
 * Fit an inversion-recovery trace measured with a fixed echo delay.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` must be valid.
 */
enum SpinechoStatus spinecho_fit_recovery(const double *x,
                                          const double *y,
                                          size_t n,
                                          double tau_fixed_ns,
                                          struct SpinechoFitResult **out);

/**
 * Fit a single Gaussian line to a field sweep (field in T).
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` must be valid.
 */
enum SpinechoStatus spinecho_fit_gaussian_line(const double *x,
                                               const double *y,
                                               size_t n,
                                               struct SpinechoFitResult **out);

/**
 * Value and standard error of a named parameter. Either output may be
 * null. An unknown name is an error.
 *
 * # Safety
 * `res` must be a live handle and `name` a NUL-terminated string.
 */
enum SpinechoStatus spinecho_fit_result_param(const struct SpinechoFitResult *res,
                                              const char *name,
                                              double *value,
                                              double *sigma);

/**
 * Whether the fit converged; false for a null handle.
 *
 * # Safety
 * `res` must be a live handle or null.
 */
bool spinecho_fit_result_converged(const struct SpinechoFitResult *res);

/**
 * Whether the result carries `flag` (e.g. `large_residual`).
 *
 * # Safety
 * `res` must be a live handle or null; `flag` a NUL-terminated string.
 */
bool spinecho_fit_result_has_flag(const struct SpinechoFitResult *res, const char *flag);

/**
 * Result as JSON. Release with [`spinecho_string_free`].
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum SpinechoStatus spinecho_fit_result_json(const struct SpinechoFitResult *res, char **out);

/**
 * # Safety
 * `res` must come from a fit call or be null.
 */
void spinecho_fit_result_free(struct SpinechoFitResult *res);

/**
 * Mean molecular separation (nm) at a mass concentration in mg/mL.
 *
 * # Safety
 * `out_nm` must be a valid pointer.
 */
enum SpinechoStatus spinecho_mean_separation_nm(double concentration_mg_ml,
                                                double molar_mass_g_mol,
                                                double *out_nm);

/**
 * Electron-electron dipolar coupling (MHz) at separation `r_nm`.
 *
 * # Safety
 * `out_mhz` must be a valid pointer.
 */
enum SpinechoStatus spinecho_dipolar_coupling_mhz(double r_nm, double *out_mhz);

/**
 * Coherence figure of merit `T2/t_op`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SpinechoStatus spinecho_figure_of_merit(double t2_ns, double top_ns, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINECHO_H */
