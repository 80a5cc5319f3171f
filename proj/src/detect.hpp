#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gk {

// Grokking / defect-onset detectors, lead-time computation, and power-law
// scaling fits over (t_grok, delta_t) tables.

struct DetectorConfig {
  double acc_threshold = 0.98;
  int n_sustained = 3;
  double onset_multiplier = 10.0;
  double onset_floor = 20.0;
  int baseline_window = 3;  // measurements forming the onset baseline
};

struct SeriesPoint {
  int64_t step = 0;
  double value = 0;
};

// Step of the first evaluation beginning a run of >= n_sustained consecutive
// evaluations with accuracy >= acc_threshold; -1 when no such run exists.
// The series must be step-ordered.
int64_t detect_grok(const std::vector<SeriesPoint>& accuracy,
                    const DetectorConfig& cfg);

// Baseline = median of the first baseline_window median-defect values; onset
// = first step (anywhere in the series) whose value exceeds
// max(onset_multiplier * baseline, onset_floor); -1 when never exceeded.
// Throws when the series is shorter than the baseline window or the baseline
// is non-finite, naming `run_name`.
int64_t detect_onset(const std::vector<SeriesPoint>& defect_medians,
                     const DetectorConfig& cfg, const std::string& run_name);

struct LeadTime {
  bool valid = false;  // false when either step is absent or delta_t < 0
  double delta_t = 0;
  double fraction = 0;  // delta_t / t_grok
};

// delta_t = grok_step - onset_step, fraction = delta_t / grok_step. Steps
// < 0 are treated as absent; negative delta_t is reported invalid.
LeadTime lead_time(int64_t grok_step, int64_t onset_step);

struct ScalingPoint {
  double t_grok = 0;
  double delta_t = 0;
};

enum class FitMethod {
  ols_loglog,    // OLS on (log t_grok, log delta_t); R^2 in log space
  nonlinear_ls,  // Gauss-Newton on delta_t = c * t^alpha; R^2 in linear space
};

enum class FitDomain { per_run, lr_means };

struct ScalingFit {
  bool valid = false;  // n >= 3 usable points and the fit converged
  double c = 0;
  double alpha = 0;
  double r2 = 0;
  double se_alpha = 0;  // OLS slope standard error (log space)
  int n = 0;            // points used
  int n_excluded = 0;   // nonpositive points dropped
  FitDomain domain = FitDomain::per_run;
};

// Power-law fit delta_t = c * t_grok^alpha. Points with a nonpositive
// coordinate are excluded and counted in n_excluded. The nonlinear variant
// starts from the log-log solution and refines in linear space; se_alpha is
// reported from the log-space OLS either way.
ScalingFit fit_power_law(const std::vector<ScalingPoint>& points,
                         FitMethod method = FitMethod::ols_loglog);

// One run's detector summary; mirrors the per-run result tables.
struct RunRow {
  double lr = 0;
  uint64_t seed = 0;
  int64_t grok_step = -1;   // -1 absent
  int64_t onset_step = -1;  // -1 absent
  double delta_t = 0;
  double lead_fraction = 0;
  std::string flags;  // semicolon-separated annotations
};

// Means of (t_grok, delta_t) per learning-rate group over runs with valid
// positive leads, then fit_power_law on the group means. Groups with no
// valid run are dropped (annotated in dropped_groups when non-null).
ScalingFit lr_mean_fit(const std::vector<RunRow>& rows,
                       FitMethod method = FitMethod::ols_loglog,
                       std::vector<double>* dropped_groups = nullptr);

// CSV with header lr,seed,grok_step,onset_step,lead,lead_fraction,flags.
// Absent steps print as empty fields.
std::string run_rows_csv(const std::vector<RunRow>& rows);

}  // namespace gk
