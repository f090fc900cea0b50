#ifndef FLEXLMM_H
#define FLEXLMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Opaque handle: a validated model (design, observations, priors, sampler
 * defaults from the config).
 */
typedef struct FlexlmmModel FlexlmmModel;

/**
 * Opaque handle: retained posterior draws.
 */
typedef struct FlexlmmSample FlexlmmSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The error message from the most recent failed call on this thread; an
 * empty string when the last call succeeded. Owned by the library.
 */
const char *flexlmm_last_error(void);

/**
 * Load a model from a dataset CSV and a TOML model configuration.
 * Returns null on failure.
 *
 * # Safety
 * Both arguments must be valid NUL-terminated strings.
 */
struct FlexlmmModel *flexlmm_model_load(const char *data_csv_path, const char *config_toml_path);

/**
 * # Safety
 * `model` must come from `flexlmm_model_load` and not be freed twice.
 */
void flexlmm_model_free(struct FlexlmmModel *model);

/**
 * Run the propriety checks and return the full report as JSON (caller frees
 * with `flexlmm_string_free`). Returns null on failure.
 *
 * # Safety
 * `model` must be a live handle from `flexlmm_model_load`.
 */
char *flexlmm_check_propriety_json(const struct FlexlmmModel *model);

/**
 * Sample the posterior. Pass 0 for `burn_in`, `thin`, or `keep` to use the
 * config values; `seed` always overrides the config. Fails (null) when the
 * propriety verdict is not Proper.
 *
 * # Safety
 * `model` must be a live handle from `flexlmm_model_load`.
 */
struct FlexlmmSample *flexlmm_fit(const struct FlexlmmModel *model,
                                  uint64_t seed,
                                  uintptr_t burn_in,
                                  uintptr_t thin,
                                  uintptr_t keep);

/**
 * # Safety
 * `sample` must come from `flexlmm_fit` and not be freed twice.
 */
void flexlmm_sample_free(struct FlexlmmSample *sample);

/**
 * Number of retained draws; 0 for a null handle.
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
uintptr_t flexlmm_sample_rows(const struct FlexlmmSample *sample);

/**
 * Number of named parameters; 0 for a null handle.
 *
 * # Safety
 * `sample` must be null or a live handle.
 */
uintptr_t flexlmm_sample_cols(const struct FlexlmmSample *sample);

/**
 * Name of parameter column `col` (caller frees with `flexlmm_string_free`);
 * null when out of range.
 *
 * # Safety
 * `sample` must be a live handle.
 */
char *flexlmm_sample_name(const struct FlexlmmSample *sample, uintptr_t col);

/**
 * Copy the draws of a named parameter into `out` (capacity `cap` doubles).
 * Returns the number of values written, or -1 on error.
 *
 * # Safety
 * `sample` and `name` must be live/valid; `out` must point to at least `cap`
 * doubles.
 */
intptr_t flexlmm_sample_column(const struct FlexlmmSample *sample,
                               const char *name,
                               double *out,
                               uintptr_t cap);

/**
 * Run model selection: Savage-Dickey Bayes factors for `n_hypotheses` point
 * hypotheses (parallel `names` / `values` arrays), tail odds on delta_eps,
 * and LPML. Returns the report as JSON (caller frees with
 * `flexlmm_string_free`); null on failure.
 *
 * # Safety
 * All pointers must be live/valid; `names` and `values` must hold
 * `n_hypotheses` entries.
 */
char *flexlmm_select_json(const struct FlexlmmModel *model,
                          const struct FlexlmmSample *sample,
                          const char *const *names,
                          const double *values,
                          uintptr_t n_hypotheses);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void flexlmm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXLMM_H */
