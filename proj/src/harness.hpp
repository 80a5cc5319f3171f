#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "config.hpp"
#include "detect.hpp"
#include "integrability.hpp"
#include "intervene.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "params.hpp"
#include "tasks.hpp"
#include "trajectory.hpp"

namespace gk {

// Experiment orchestration: task construction, the training loop with
// eval/probe/snapshot scheduling and intervention hooks, checkpoint resume,
// sweep + scaling fits, archive analysis, and plot-data export.

struct RunPaths {
  std::string root;
  std::string metrics_jsonl;
  std::string metrics_csv;
  std::string summary_json;
  std::string config_txt;
  std::string checkpoint;
  std::string weights_dir;  // snapshot archive
  std::string grads_dir;    // accumulated-gradient archive
  std::string deltas_dir;   // retained commutator samples
};

RunPaths run_paths(const std::string& output_dir, const std::string& run_id);

// Resolves a run reference to its root directory: either a path that already
// contains summary.json/config.txt, or a run id under `output_dir`.
std::string resolve_run_root(const std::string& output_dir,
                             const std::string& run_ref);

// Retained commutator vectors, one binary file per probed step (k full
// flat-parameter float32 vectors each).
class DeltaStore {
 public:
  DeltaStore() = default;

  static DeltaStore create(const std::string& dir);
  static DeltaStore open(const std::string& dir);

  void record(int64_t step, const std::vector<std::vector<float>>& deltas);
  std::vector<DeltaSample> read(int64_t step) const;
  std::vector<DeltaSample> read_all() const;
  void truncate_after(int64_t keep_through);

  const std::vector<int64_t>& steps() const { return steps_; }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<int64_t> steps_;
};

// Task-agnostic training surface: parameter layout, initialization, loss
// gradient, train batches, and train/test evaluation.
class TaskRuntime {
 public:
  virtual ~TaskRuntime() = default;
  virtual const ParamSet& params() const = 0;
  virtual std::vector<float> init_theta(uint64_t seed) const = 0;
  virtual std::vector<std::string> snapshot_names() const = 0;
  virtual int64_t n_train() const = 0;
  virtual double loss_and_grad(const float* theta, const Batch& b,
                               float* grad) = 0;
  virtual Batch make_train_batch(const std::vector<int64_t>& idx) const = 0;
  virtual EvalResult eval_train(const float* theta) = 0;
  virtual EvalResult eval_test(const float* theta) = 0;
};

// Builds data + model for a resolved config. Generates the SCAN dataset file
// when cfg.data_path does not exist yet.
std::unique_ptr<TaskRuntime> make_task_runtime(const ExperimentConfig& cfg);

// Multiplies the selected initial weights by `scale`. Scope "all" covers
// every non-layernorm parameter, "attention" the attention projection
// matrices, "qk" only query/key matrices.
void scale_init(std::vector<float>& theta, const ParamSet& ps, double scale,
                const std::string& scope);

struct RunResult {
  RunSummary summary;
  std::vector<MetricRow> rows;
};

// One full training run (resolves the config copy first). `resume` continues
// from the run's checkpoint; `halt_after` stops after the measurement block
// at that step without finalizing (crash simulation for resume tests).
RunResult train_run(const ExperimentConfig& cfg, bool resume = false,
                    int64_t halt_after = -1);

struct SweepResult {
  std::vector<RunRow> rows;
  ScalingFit per_run;
  ScalingFit lr_means;
  std::vector<double> dropped_groups;  // lr groups with no valid run
};

// One run per (lr, seed) from the base template (auto fields re-resolved per
// cell, so lr-dependent budgets apply); failures are isolated into row flags.
SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& lrs,
                  const std::vector<uint64_t>& seeds);

// Detector table -> both scaling fits (per-run points and lr-group means).
SweepResult fits_from_rows(std::vector<RunRow> rows);

// Parses a run table CSV in run_rows_csv format (absent steps empty).
std::vector<RunRow> parse_run_rows(const std::string& csv_text);
std::vector<RunRow> read_run_rows(const std::string& path);

std::string fit_json(const SweepResult& s);

// Scatter of valid (t_grok, delta_t) points plus a log-spaced fit line.
void write_scaling_plotdata(const std::vector<RunRow>& rows,
                            const ScalingFit& fit, const std::string& out_dir);

// One training run per (condition, strength) x seed from the base template;
// trigger/period/basis fields come from the base. Failed cells are flagged
// and the sweep continues.
std::vector<DoseCell> dose_sweep(
    const ExperimentConfig& base,
    const std::vector<std::pair<std::string, double>>& grid,
    const std::vector<uint64_t>& seeds);

struct MatrixReport {
  std::string name;
  bool valid = false;
  double pc1_pct = 0;  // final expanding window
  int64_t turnover_step = -1;
  double null_z = 0;
  double null_mean = 0;
  double null_std = 0;
};

struct AnalysisResult {
  RunSummary summary;
  std::vector<MatrixReport> matrices;
  SpectralSplit split;
  PhaseSet phases;
  PhaseRatioTable ratios;
  bool has_ratios = false;  // deltas + gradient archive were present
};

// PCA/null/integrability analysis over a finished run directory. Throws when
// the run lacks a summary or snapshot archive.
AnalysisResult analyze_run(const std::string& run_root, int k_basis,
                           int n_null, uint64_t seed);

// matrices.csv, split.csv, phases.csv, phase_ratios.csv under out_dir.
void write_analysis(const AnalysisResult& a, const std::string& out_dir);

// Plot-ready series for one run: accuracy/defect overlay, smoothed-accuracy
// instability traces (windows 200 and 500 steps), threshold-crossing counts,
// and per-matrix expanding PC1 curves when snapshots are present.
void export_plotdata(const std::string& run_root, const std::string& out_dir);

}  // namespace gk
