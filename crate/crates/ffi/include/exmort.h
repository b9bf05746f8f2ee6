#ifndef EXMORT_H
#define EXMORT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum ExmStatus {
  EXM_STATUS_OK = 0,
  EXM_STATUS_NULL_POINTER = 1,
  EXM_STATUS_INVALID_ARGUMENT = 2,
  EXM_STATUS_FIT = 3,
  EXM_STATUS_CONFIG = 4,
  EXM_STATUS_IO = 5,
  EXM_STATUS_SINGULAR = 6,
  EXM_STATUS_UNDEFINED = 7,
  EXM_STATUS_PANIC = 8,
} ExmStatus;

// Residual dispersion convention.
typedef enum ExmSigma {
  // Divide by n.
  EXM_SIGMA_POPULATION = 0,
  // Divide by n - 5.
  EXM_SIGMA_RESIDUAL_DOF = 1,
} ExmSigma;

// Opaque fitted quartic for one year.
typedef struct ExmPolyFit ExmPolyFit;

// Opaque set of pipeline estimates.
typedef struct ExmResults ExmResults;

// Scalar diagnostics of a fit.
typedef struct ExmFitStats {
  double sigma;
  double adj_r2;
  double ad_stat;
  double ad_pvalue;
  double band_lo_offset;
  double band_hi_offset;
} ExmFitStats;

// One row of pipeline output. Sex: 0 both, 1 male, 2 female. Age group:
// 0..=8 for the brackets 0-5 … 70+, 9 for all ages.
typedef struct ExmEstimate {
  int32_t period_start;
  int32_t period_end;
  int32_t sex;
  int32_t age_group;
  double psi;
  double psi_lo;
  double psi_hi;
  double delta_psi_pct;
  double delta_psi_lo;
  double delta_psi_hi;
  double rate_per_100k;
  double rate_lo;
  double rate_hi;
  double expected_total;
  uint64_t observed_total;
} ExmEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. Never NULL.
const char *exm_last_error_message(void);

// Library version, a static NUL-terminated string.
const char *exm_version(void);

// Standardized week (1..=53) of a calendar date.
//
// # Safety
// `out_week` must be NULL or point to writable memory.
enum ExmStatus exm_week_of(int32_t year, uint32_t month, uint32_t day, uint8_t *out_week);

// Sets `*out_non_illness` to 1 for a non-illness cause, 0 otherwise.
// With `prefixes` NULL the default external-cause prefixes are used.
//
// # Safety
// `code` must be a NUL-terminated string; `prefixes` NULL or an array of
// `n_prefixes` NUL-terminated strings.
enum ExmStatus exm_classify_cause(const char *code,
                                  const char *const *prefixes,
                                  size_t n_prefixes,
                                  int32_t *out_non_illness);

// Fits the quartic to 52 weekly counts.
//
// # Safety
// `counts` must point to `n_counts` readable values; `out_fit` must be
// writable. The handle must be released with [`exm_polyfit_free`].
enum ExmStatus exm_polyfit_new(int32_t year,
                               const uint64_t *counts,
                               size_t n_counts,
                               uint64_t week53_count,
                               enum ExmSigma sigma,
                               struct ExmPolyFit **out_fit);

// Writes `(alpha, beta1, beta2, beta3, beta4)` into `out5`.
//
// # Safety
// `fit` must be a live handle; `out5` must hold 5 doubles.
enum ExmStatus exm_polyfit_coefficients(const struct ExmPolyFit *fit, double *out5);

// Fitted values for weeks 1..=52; `len` must be 52.
//
// # Safety
// `fit` must be a live handle; `out` must hold `len` doubles.
enum ExmStatus exm_polyfit_fitted(const struct ExmPolyFit *fit, double *out, size_t len);

// Residuals (fitted minus observed) for weeks 1..=52; `len` must be 52.
//
// # Safety
// `fit` must be a live handle; `out` must hold `len` doubles.
enum ExmStatus exm_polyfit_residuals(const struct ExmPolyFit *fit, double *out, size_t len);

// # Safety
// `fit` must be a live handle; `out_stats` must be writable.
enum ExmStatus exm_polyfit_stats(const struct ExmPolyFit *fit, struct ExmFitStats *out_stats);

// # Safety
// `fit` must be NULL or a handle from [`exm_polyfit_new`] not yet freed.
void exm_polyfit_free(struct ExmPolyFit *fit);

// Anderson–Darling normality test with estimated mean and variance.
// Either output pointer may be NULL.
//
// # Safety
// `sample` must point to `n` readable doubles.
enum ExmStatus exm_anderson_darling(const double *sample,
                                    size_t n,
                                    double *out_statistic,
                                    double *out_pvalue);

// Yearly growth of the baseline level in percent, `100·m / (m·year + c)`
// for the trend line `m·year + c`.
//
// # Safety
// `out_pct` must be writable.
enum ExmStatus exm_alpha_growth_rate(double slope, double intercept, int32_t year, double *out_pct);

// Normal interval for a period excess total from per-year forecast σ,
// leap flags and week-53 bias factors, plus any extra variance.
//
// # Safety
// `sigmas`, `leap` and `bias` must each point to `n_years` values;
// `out_lo` and `out_hi` must be writable.
enum ExmStatus exm_excess_interval(double psi,
                                   const double *sigmas,
                                   const uint8_t *leap,
                                   const double *bias,
                                   size_t n_years,
                                   double level,
                                   double extra_variance,
                                   double *out_lo,
                                   double *out_hi);

// Runs the full estimation on a canonical record file. `config_toml`
// (TOML text, same format as the command-line config) and
// `population_path` may be NULL.
//
// # Safety
// String arguments must be NULL or NUL-terminated; `out_results` must be
// writable. Release the handle with [`exm_results_free`].
enum ExmStatus exm_pipeline_run(const char *canonical_path,
                                const char *config_toml,
                                const char *population_path,
                                struct ExmResults **out_results);

// Number of estimates; 0 for NULL.
//
// # Safety
// `results` must be NULL or a live handle.
size_t exm_results_len(const struct ExmResults *results);

// # Safety
// `results` must be a live handle; `out_estimate` must be writable.
enum ExmStatus exm_results_get(const struct ExmResults *results,
                               size_t index,
                               struct ExmEstimate *out_estimate);

// # Safety
// `results` must be NULL or a handle from [`exm_pipeline_run`] not yet
// freed.
void exm_results_free(struct ExmResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXMORT_H */
