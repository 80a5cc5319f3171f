/* grokkit: C interface to the grokking-dynamics toolkit.
 *
 * Every function returns a status code; 0 is success. On failure the
 * thread-local message from gk_last_error() describes what went wrong.
 * Strings handed back through char** are heap-allocated; release them with
 * gk_string_free().
 */
#ifndef GROKKIT_H
#define GROKKIT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* status codes */
#define GK_OK 0
#define GK_ERR_CONFIG 1   /* bad key, value, file, or argument */
#define GK_ERR_RUN 2      /* training/sweep failure */
#define GK_ERR_ANALYSIS 3 /* analysis precondition or fit failure */

/* Experiment configuration handle (flat key=value fields). */
typedef struct gk_config gk_config;

/* Message for the most recent failure on this thread ("" when none). */
const char* gk_last_error(void);

void gk_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

int gk_config_create(gk_config** out);
int gk_config_load(const char* path, gk_config** out);
void gk_config_free(gk_config* cfg);

/* Sets one field by key (same names as the config file). */
int gk_config_set(gk_config* cfg, const char* key, const char* value);
/* Current value of one field, rendered as a string. */
int gk_config_get(const gk_config* cfg, const char* key, char** value);
/* Fills auto fields from the task/lr/environment and validates. */
int gk_config_resolve(gk_config* cfg);
/* All fields as "key = value" lines in canonical order. */
int gk_config_dump(const gk_config* cfg, char** text);

/* ---- training --------------------------------------------------------- */

/* One full training run; returns the run summary as JSON. resume != 0
 * continues from the run's checkpoint. */
int gk_train(const gk_config* cfg, int resume, char** summary_json);

/* One run per (lr, seed): lists are comma-separated numbers. Returns the
 * detector table CSV and both scaling fits as JSON. */
int gk_sweep(const gk_config* base, const char* lrs, const char* seeds,
             char** rows_csv, char** fits_json);

/* Dose-response sweep: grid items "condition:strength", comma-separated
 * (e.g. "kick_1a:0,kick_1a:0.01,kick_1a:0.1"). Returns the cell table CSV. */
int gk_dose(const gk_config* base, const char* grid, const char* seeds,
            char** table_csv);

/* ---- analysis over a finished run directory --------------------------- */

/* PCA/null/integrability analysis. Writes CSV tables under out_dir when it
 * is non-NULL and non-empty; returns a JSON report either way. */
int gk_analyze(const char* run_dir, int k_basis, int n_null, uint64_t seed,
               const char* out_dir, char** report_json);

/* Plot-ready CSV series (accuracy/defect overlay, smoothed instability
 * traces, threshold-crossing counts, expanding PC1 curves). */
int gk_export(const char* run_dir, const char* out_dir);

/* ---- detectors and fits on caller-supplied series --------------------- */

/* First step opening a run of >= sustained consecutive evaluations with
 * accuracy >= threshold; -1 when absent. Series must be step-ordered. */
int gk_detect_grok(const int64_t* steps, const double* test_acc, int n,
                   double threshold, int sustained, int64_t* grok_step);

/* First step whose defect median exceeds max(multiplier * baseline,
 * floor_value), baseline = median of the first baseline_window values; -1
 * when never exceeded. */
int gk_detect_onset(const int64_t* steps, const double* defect_median, int n,
                    double multiplier, double floor_value, int baseline_window,
                    int64_t* onset_step);

/* delta_t = grok - onset and delta_t / grok; fails when either step is
 * absent (< 0) or the lead is negative. */
int gk_lead_time(int64_t grok_step, int64_t onset_step, double* delta_t,
                 double* fraction);

/* Power-law fit delta_t = c * t_grok^alpha over n points (nonpositive points
 * excluded). nonlinear = 0 fits OLS in log-log space, 1 refines with
 * Gauss-Newton in linear space. */
int gk_fit_power_law(const double* t_grok, const double* delta_t, int n,
                     int nonlinear, double* c, double* alpha, double* r2,
                     double* se_alpha);

/* Reads a run table CSV (lr,seed,grok_step,onset_step,...) and returns the
 * per-run and lr-mean scaling fits as JSON. */
int gk_fit_run_table(const char* csv_path, char** fits_json);

#ifdef __cplusplus
}
#endif

#endif /* GROKKIT_H */
