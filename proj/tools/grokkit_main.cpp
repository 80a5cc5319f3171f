// Command-line front end for the grokkit shared library. Every verb goes
// through the C interface; exit codes are 0 success, 1 config error, 2 run
// failure, 3 analysis failure.
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grokkit.h"

namespace {

[[noreturn]] void die(int code, const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  std::exit(code);
}

[[noreturn]] void die(int code) { die(code, gk_last_error()); }

// Takes ownership of a C-API string and converts it.
std::string take_string(char* s) {
  std::string out = s ? s : "";
  gk_string_free(s);
  return out;
}

// Unrecognized "--key value" / "--key=value" flags become config overrides.
void apply_extras(gk_config* cfg, const std::vector<std::string>& extras) {
  for (size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0)
      die(1, "unexpected argument '" + tok + "'");
    std::string key = tok.substr(2);
    std::string value;
    size_t eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) die(1, "flag --" + key + " needs a value");
      value = extras[++i];
    }
    if (gk_config_set(cfg, key.c_str(), value.c_str()) != GK_OK) die(1);
  }
}

gk_config* build_config(const std::string& config_path,
                        const std::vector<std::string>& extras) {
  gk_config* cfg = nullptr;
  int rc = config_path.empty() ? gk_config_create(&cfg)
                               : gk_config_load(config_path.c_str(), &cfg);
  if (rc != GK_OK) die(1);
  apply_extras(cfg, extras);
  return cfg;
}

// Validates task/field consistency on a throwaway copy so lr-dependent auto
// fields stay unresolved in the template handed to sweep verbs.
void validate_config(const std::string& config_path,
                     const std::vector<std::string>& extras) {
  gk_config* probe = build_config(config_path, extras);
  if (gk_config_resolve(probe) != GK_OK) {
    std::string msg = gk_last_error();
    gk_config_free(probe);
    die(1, msg);
  }
  gk_config_free(probe);
}

void write_file(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) die(3, "cannot write " + path);
  out << text;
}

std::string output_root() {
  const char* env = std::getenv("GROKKIT_OUT");
  return (env && *env) ? env : "runs";
}

// Run reference -> metrics.csv path (direct run directory or id under the
// output root).
std::string find_metrics_csv(const std::string& run_ref) {
  namespace fs = std::filesystem;
  fs::path direct = fs::path(run_ref) / "metrics.csv";
  if (fs::exists(direct)) return direct.string();
  fs::path nested = fs::path(output_root()) / run_ref / "metrics.csv";
  if (fs::exists(nested)) return nested.string();
  die(3, "no metrics.csv under '" + run_ref + "'");
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

struct MetricSeries {
  std::vector<int64_t> acc_steps;
  std::vector<double> acc;
  std::vector<int64_t> defect_steps;
  std::vector<double> defect;
};

MetricSeries read_metric_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) die(3, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) die(3, path + ": empty file");
  std::vector<std::string> header = split_fields(line);
  int i_step = -1, i_acc = -1, i_defect = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "step") i_step = int(i);
    if (header[i] == "test_acc") i_acc = int(i);
    if (header[i] == "defect_median") i_defect = int(i);
  }
  if (i_step < 0 || i_acc < 0 || i_defect < 0)
    die(3, path + ": missing step/test_acc/defect_median columns");
  MetricSeries s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line);
    if (int(f.size()) <= i_step) continue;
    int64_t step = std::strtoll(f[i_step].c_str(), nullptr, 10);
    if (int(f.size()) > i_acc && !f[i_acc].empty()) {
      s.acc_steps.push_back(step);
      s.acc.push_back(std::strtod(f[i_acc].c_str(), nullptr));
    }
    if (int(f.size()) > i_defect && !f[i_defect].empty()) {
      s.defect_steps.push_back(step);
      s.defect.push_back(std::strtod(f[i_defect].c_str(), nullptr));
    }
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grokking dynamics toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string lrs = "1e-3";
  std::string seeds = "42";
  std::string grid;
  std::string run_ref;
  std::string table_path;
  std::string out_dir;
  bool resume = false;
  bool nonlinear = false;
  int k_basis = 5;
  int n_null = 100;
  uint64_t analysis_seed = 42;
  double threshold = 0.98;
  int sustained = 3;
  double multiplier = 10.0;
  double onset_floor = 20.0;
  int baseline_window = 3;

  CLI::App* c_train = app.add_subcommand("train", "run one training job");
  c_train->add_option("--config", config_path, "key = value config file");
  c_train->add_flag("--resume", resume, "continue from the run checkpoint");
  c_train->allow_extras();

  CLI::App* c_sweep =
      app.add_subcommand("sweep", "one run per (lr, seed) plus scaling fits");
  c_sweep->add_option("--config", config_path, "key = value config file");
  c_sweep->add_option("--lrs", lrs, "comma-separated learning rates");
  c_sweep->add_option("--seeds", seeds, "comma-separated seeds");
  c_sweep->add_option("--out", out_dir, "directory for rows/fits files");
  c_sweep->allow_extras();

  CLI::App* c_analyze = app.add_subcommand(
      "analyze", "PCA, null, and integrability analysis of a finished run");
  c_analyze->add_option("--run", run_ref, "run directory or id")->required();
  c_analyze->add_option("--k", k_basis, "basis rank");
  c_analyze->add_option("--nulls", n_null, "random-walk null draws");
  c_analyze->add_option("--seed", analysis_seed, "null/ratio RNG seed");
  c_analyze->add_option("--out", out_dir, "directory for CSV tables");

  CLI::App* c_fit = app.add_subcommand(
      "fit", "detectors on a metric log, or scaling fits on a run table");
  c_fit->add_option("--run", run_ref, "run directory or id");
  c_fit->add_option("--table", table_path, "run table CSV");
  c_fit->add_flag("--nonlinear", nonlinear, "refine fits in linear space");
  c_fit->add_option("--threshold", threshold, "grok accuracy threshold");
  c_fit->add_option("--sustained", sustained, "consecutive evals required");
  c_fit->add_option("--multiplier", multiplier, "onset baseline multiplier");
  c_fit->add_option("--floor", onset_floor, "onset absolute floor");
  c_fit->add_option("--baseline-window", baseline_window,
                    "onset baseline sample count");

  CLI::App* c_intervene =
      app.add_subcommand("intervene", "dose-response sweep over conditions");
  c_intervene->add_option("--config", config_path, "key = value config file");
  c_intervene->add_option("--grid", grid, "condition:strength list")
      ->required();
  c_intervene->add_option("--seeds", seeds, "comma-separated seeds");
  c_intervene->add_option("--out", out_dir, "file for the cell table");
  c_intervene->allow_extras();

  CLI::App* c_export =
      app.add_subcommand("export", "plot-ready CSV series for one run");
  c_export->add_option("--run", run_ref, "run directory or id")->required();
  c_export->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*c_train) {
    gk_config* cfg = build_config(config_path, c_train->remaining());
    if (gk_config_resolve(cfg) != GK_OK) die(1);
    char* summary = nullptr;
    if (gk_train(cfg, resume ? 1 : 0, &summary) != GK_OK) die(2);
    std::fputs(take_string(summary).c_str(), stdout);
    gk_config_free(cfg);
    return 0;
  }

  if (*c_sweep) {
    validate_config(config_path, c_sweep->remaining());
    gk_config* cfg = build_config(config_path, c_sweep->remaining());
    char* rows = nullptr;
    char* fits = nullptr;
    int rc = gk_sweep(cfg, lrs.c_str(), seeds.c_str(), &rows, &fits);
    gk_config_free(cfg);
    if (rc != GK_OK) die(rc == GK_ERR_CONFIG ? 1 : 2);
    std::string rows_text = take_string(rows);
    std::string fits_text = take_string(fits);
    if (!out_dir.empty()) {
      write_file(out_dir + "/sweep_rows.csv", rows_text);
      write_file(out_dir + "/sweep_fits.json", fits_text);
    }
    std::fputs(fits_text.c_str(), stdout);
    return 0;
  }

  if (*c_analyze) {
    char* report = nullptr;
    if (gk_analyze(run_ref.c_str(), k_basis, n_null, analysis_seed,
                   out_dir.empty() ? nullptr : out_dir.c_str(),
                   &report) != GK_OK)
      die(3);
    std::fputs(take_string(report).c_str(), stdout);
    return 0;
  }

  if (*c_fit) {
    if (table_path.empty() == run_ref.empty())
      die(1, "fit needs exactly one of --table or --run");
    if (!table_path.empty()) {
      char* fits = nullptr;
      if (gk_fit_run_table(table_path.c_str(), &fits) != GK_OK) die(3);
      std::fputs(take_string(fits).c_str(), stdout);
      return 0;
    }
    MetricSeries s = read_metric_series(find_metrics_csv(run_ref));
    int64_t grok = -1;
    if (gk_detect_grok(s.acc_steps.data(), s.acc.data(), int(s.acc.size()),
                       threshold, sustained, &grok) != GK_OK)
      die(3);
    int64_t onset = -1;
    if (gk_detect_onset(s.defect_steps.data(), s.defect.data(),
                        int(s.defect.size()), multiplier, onset_floor,
                        baseline_window, &onset) != GK_OK)
      die(3);
    double lead = 0, fraction = 0;
    if (grok >= 0 && onset >= 0 && onset <= grok)
      gk_lead_time(grok, onset, &lead, &fraction);
    nlohmann::json j = {{"grok_step", grok},
                        {"onset_step", onset},
                        {"lead_delta", lead},
                        {"lead_fraction", fraction}};
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
    return 0;
  }

  if (*c_intervene) {
    validate_config(config_path, c_intervene->remaining());
    gk_config* cfg = build_config(config_path, c_intervene->remaining());
    char* table = nullptr;
    int rc = gk_dose(cfg, grid.c_str(), seeds.c_str(), &table);
    gk_config_free(cfg);
    if (rc != GK_OK) die(rc == GK_ERR_CONFIG ? 1 : 2);
    std::string text = take_string(table);
    write_file(out_dir, text);
    std::fputs(text.c_str(), stdout);
    return 0;
  }

  if (*c_export) {
    if (gk_export(run_ref.c_str(), out_dir.c_str()) != GK_OK) die(3);
    return 0;
  }

  return 0;
}
