#ifndef NPKSD_H
#define NPKSD_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero means success.
typedef enum NpksdStatus {
  NPKSD_STATUS_OK = 0,
  NPKSD_STATUS_NULL_POINTER = 1,
  NPKSD_STATUS_INVALID_ARGUMENT = 2,
  NPKSD_STATUS_DIMENSION_MISMATCH = 3,
  NPKSD_STATUS_NUMERICAL = 4,
  NPKSD_STATUS_IO = 5,
  NPKSD_STATUS_PARSE = 6,
  NPKSD_STATUS_UNSUPPORTED = 7,
  NPKSD_STATUS_PANIC = 8,
} NpksdStatus;

// Sampler for a synthetic model.
typedef struct NpksdGenerator NpksdGenerator;

// Fitted conditional score model.
typedef struct NpksdModel NpksdModel;

// Row-major sample matrix.
typedef struct NpksdSamples NpksdSamples;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until the next failing call.
const char *npksd_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a string produced by this library and not yet freed.
void npksd_string_free(char *s);

// Copies `rows * cols` row-major values into a new sample matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum NpksdStatus npksd_samples_new(const double *data,
                                   size_t rows,
                                   size_t cols,
                                   struct NpksdSamples **out);

// Reads a headerless numeric CSV file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum NpksdStatus npksd_samples_from_csv(const char *path, struct NpksdSamples **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `samples` must be null or a live handle.
size_t npksd_samples_rows(const struct NpksdSamples *samples);

// Number of columns, or 0 for a null handle.
//
// # Safety
// `samples` must be null or a live handle.
size_t npksd_samples_cols(const struct NpksdSamples *samples);

// Copies the row-major values into `dst`, which must hold `rows * cols` doubles.
//
// # Safety
// `dst` must point to `capacity` writable doubles.
enum NpksdStatus npksd_samples_copy(const struct NpksdSamples *samples,
                                    double *dst,
                                    size_t capacity);

// # Safety
// `samples` must be null or a handle not yet freed.
void npksd_samples_free(struct NpksdSamples *samples);

// Gaussian with identity covariance scaled by `1 + variance_shift`.
//
// # Safety
// `out` must be writable.
enum NpksdStatus npksd_generator_gvd(size_t dim,
                                     double variance_shift,
                                     struct NpksdGenerator **out);

// Balanced two-component Gaussian mixture with adjacent-coordinate covariance `rho`.
//
// # Safety
// `out` must be writable.
enum NpksdStatus npksd_generator_mog(size_t dim, double rho, struct NpksdGenerator **out);

// Draws `count` rows with a seeded stream.
//
// # Safety
// `generator` must be a live handle; `out` must be writable.
enum NpksdStatus npksd_generator_sample(const struct NpksdGenerator *generator,
                                        size_t count,
                                        uint64_t seed,
                                        struct NpksdSamples **out);

// # Safety
// `generator` must be null or a handle not yet freed.
void npksd_generator_free(struct NpksdGenerator *generator);

// Fits conditional scores by ridge score matching. `mean_statistic` selects the
// mean of the remaining coordinates as the conditioning summary.
//
// # Safety
// `samples` must be a live handle; `out` must be writable.
enum NpksdStatus npksd_model_fit(const struct NpksdSamples *samples,
                                 bool mean_statistic,
                                 uint32_t degree,
                                 double ridge,
                                 struct NpksdModel **out);

// Serializes a fitted model, coefficients included, as JSON.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum NpksdStatus npksd_model_to_json(const struct NpksdModel *model, char **out);

// # Safety
// `model` must be null or a handle not yet freed.
void npksd_model_free(struct NpksdModel *model);

// Kernel Stein discrepancy (V-statistic) of `samples` against the generator's exact score.
//
// # Safety
// Handles must be live; `out` must be writable.
enum NpksdStatus npksd_ksd_v(const struct NpksdSamples *samples,
                             const struct NpksdGenerator *generator,
                             double bandwidth,
                             double *out);

// Runs the NP-KSD Monte Carlo test of `observed` against `generator`.
// `config_json` holds the test settings (`n`, `N`, `B`, `b`, `alpha`, `seed`, ...);
// the report is returned as JSON.
//
// # Safety
// Handles must be live, `config_json` nul-terminated, `out_json` writable.
enum NpksdStatus npksd_test_json(const struct NpksdSamples *observed,
                                 const struct NpksdGenerator *generator,
                                 const char *config_json,
                                 char **out_json);

// Executes a complete run configuration (any method) and returns the report as JSON.
//
// # Safety
// `config_json` must be nul-terminated; `out_json` writable.
enum NpksdStatus npksd_run_json(const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NPKSD_H */
