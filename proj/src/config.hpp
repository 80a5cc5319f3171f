#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gk {

// Flat experiment configuration: every field is settable from a key=value
// config file and overridable by a --key value command-line flag of the same
// name. Zero-valued "auto" fields are resolved to task- and lr-dependent
// defaults by resolve().

struct ExperimentConfig {
  // experiment identity
  std::string task = "dyck";  // dyck | scan
  std::string run_id;         // auto: derived from task/lr/seed
  std::string output_dir;     // auto: $GROKKIT_OUT or ./runs
  std::string data_path;      // scan dataset file; auto-generated if absent

  // model (0 = task default)
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_ff = 0;

  // training
  double lr = 1e-3;
  double weight_decay = 1.0;
  double clip_norm = 1.0;
  int64_t max_steps = 0;  // 0 = lr-dependent budget
  uint64_t seed = 42;
  int batch_size = 0;  // 0 = task default (dyck: full batch, scan: 128)
  double init_scale = 0;   // 0 = task default; multiplies selected weights
  std::string init_scope = "";  // auto | all | attention | qk

  // data
  int n_train = 0;     // 0 = task default
  int eval_test_n = 0; // 0 = task default subset; -1 = full test set

  // schedules
  int64_t eval_interval = 100;
  int64_t probe_interval = 0;     // 0 = 100 for lr >= 5e-4 else 500
  int64_t snapshot_interval = 200;
  int64_t delta_interval = 0;     // retained-delta cadence; 0 = snapshot_interval

  // defect probe
  double eta_comm = 1e-3;
  int k_meas = 5;
  int probe_batch = 0;  // 0 = task default (dyck 16, scan 64)
  double adapt_floor = 1e-6;
  double adapt_target = 1e-5;

  // detectors
  double acc_threshold = 0.98;
  int n_sustained = 3;
  double onset_multiplier = 10.0;
  double onset_floor = 20.0;
  int baseline_window = 3;

  // termination
  bool early_stop = true;
  int64_t early_stop_margin = 2000;

  // intervention
  std::string condition = "baseline";
  double strength = 0;
  int64_t trigger_step = -1;
  int64_t period = 10;
  std::string basis_run;
  int basis_k = 5;
};

// Parses "key = value" lines ('#' comments, blank lines allowed). Throws on
// unknown keys or malformed lines, naming the line number.
ExperimentConfig parse_config_file(const std::string& path);

// Applies one key=value override. Throws on unknown key or bad value.
void set_config_key(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value);

// All keys in canonical order with current values rendered as strings.
std::vector<std::pair<std::string, std::string>> config_items(
    const ExperimentConfig& cfg);

// Fills auto fields from the task, lr, and environment (GROKKIT_OUT), then
// validates. Throws on contradictions (unknown task, nonpositive steps...).
void resolve_config(ExperimentConfig& cfg);

// FNV-1a 64-bit hash over the canonical key=value rendering of every field
// except run_id and output_dir (stable across resume and relocation).
uint64_t config_hash(const ExperimentConfig& cfg);

// Canonical rendering, one "key = value" line per field.
std::string config_to_string(const ExperimentConfig& cfg);

}  // namespace gk
