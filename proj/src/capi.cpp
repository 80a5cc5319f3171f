#include "grokkit.h"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "config.hpp"
#include "detect.hpp"
#include "harness.hpp"
#include "integrability.hpp"
#include "intervene.hpp"
#include "metrics.hpp"

struct gk_config {
  gk::ExperimentConfig cfg;
};

namespace {

thread_local std::string t_err;

template <typename Fn>
int guarded(int err_code, Fn&& fn) {
  try {
    fn();
    t_err.clear();
    return GK_OK;
  } catch (const std::exception& e) {
    t_err = e.what();
    return err_code;
  } catch (...) {
    t_err = "unknown error";
    return err_code;
  }
}

int null_arg(const char* name) {
  t_err = std::string("null argument: ") + name;
  return GK_ERR_CONFIG;
}

// Fills a char** output (when requested) with a heap copy the caller frees.
void set_out(char** out, const std::string& s) {
  if (!out) return;
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  *out = p;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (start <= text.size()) {
    size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    std::string item = text.substr(start, comma - start);
    size_t b = item.find_first_not_of(" \t");
    if (b != std::string::npos) {
      size_t e = item.find_last_not_of(" \t");
      parts.push_back(item.substr(b, e - b + 1));
    }
    start = comma + 1;
  }
  return parts;
}

double parse_double(const std::string& s, const std::string& what) {
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(what + ": bad number '" + s + "'");
  }
  if (pos != s.size())
    throw std::runtime_error(what + ": bad number '" + s + "'");
  return v;
}

uint64_t parse_u64(const std::string& s, const std::string& what) {
  size_t pos = 0;
  uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(what + ": bad integer '" + s + "'");
  }
  if (pos != s.size())
    throw std::runtime_error(what + ": bad integer '" + s + "'");
  return v;
}

std::vector<double> parse_double_list(const char* text, const char* what) {
  std::vector<double> out;
  for (const std::string& item : split_list(text))
    out.push_back(parse_double(item, what));
  if (out.empty()) throw std::runtime_error(std::string(what) + ": empty list");
  return out;
}

std::vector<uint64_t> parse_seed_list(const char* text) {
  std::vector<uint64_t> out;
  for (const std::string& item : split_list(text))
    out.push_back(parse_u64(item, "seeds"));
  if (out.empty()) throw std::runtime_error("seeds: empty list");
  return out;
}

// "condition:strength" items; condition names are validated up front so the
// whole grid is rejected before any cell runs.
std::vector<std::pair<std::string, double>> parse_grid(const char* text) {
  std::vector<std::pair<std::string, double>> out;
  for (const std::string& item : split_list(text)) {
    size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("dose grid: item '" + item +
                               "' is not condition:strength");
    std::string cond = item.substr(0, colon);
    gk::condition_from_name(cond);
    out.emplace_back(cond, parse_double(item.substr(colon + 1), "dose grid"));
  }
  if (out.empty()) throw std::runtime_error("dose grid: empty list");
  return out;
}

std::string default_output_dir() {
  const char* env = std::getenv("GROKKIT_OUT");
  return (env && *env) ? env : "runs";
}

std::string analysis_report_json(const gk::AnalysisResult& a) {
  nlohmann::json j;
  j["run_id"] = a.summary.run_id;
  j["grok_step"] = a.summary.grok_step;
  j["onset_step"] = a.summary.onset_step;
  j["last_step"] = a.summary.last_step;

  nlohmann::json ms = nlohmann::json::array();
  for (const gk::MatrixReport& m : a.matrices) {
    nlohmann::json e;
    e["name"] = m.name;
    e["valid"] = m.valid;
    if (m.valid) {
      e["pc1_pct"] = m.pc1_pct;
      e["turnover_step"] = m.turnover_step;
      e["null_z"] = m.null_z;
      e["null_mean"] = m.null_mean;
      e["null_std"] = m.null_std;
    }
    ms.push_back(e);
  }
  j["matrices"] = ms;

  j["split"] = {{"attention_mean", a.split.attention_mean},
                {"mlp_mean", a.split.mlp_mean},
                {"n_attention", a.split.n_attention},
                {"n_mlp", a.split.n_mlp}};

  nlohmann::json phases = nlohmann::json::array();
  for (const gk::PhaseRange& r : a.phases.ranges) {
    if (!r.present) continue;
    phases.push_back({{"phase", gk::phase_name(r.phase)},
                      {"begin", r.begin},
                      {"end", r.end}});
  }
  j["phases"] = phases;

  if (a.has_ratios) {
    nlohmann::json table = nlohmann::json::object();
    for (const gk::PhaseRange& r : a.phases.ranges) {
      if (!r.present) continue;
      nlohmann::json row = nlohmann::json::object();
      for (int k = 0; k < gk::kNumBasisKinds; ++k) {
        const gk::BasisKind kind = static_cast<gk::BasisKind>(k);
        const gk::PhaseBasisCell& cell = a.ratios.cell(r.phase, kind);
        if (!cell.present) continue;
        row[gk::basis_kind_name(kind)] = {{"ratio", cell.ratio},
                                          {"n", cell.n}};
      }
      table[gk::phase_name(r.phase)] = row;
    }
    j["phase_ratios"] = table;
  } else {
    j["phase_ratios"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace

extern "C" {

const char* gk_last_error(void) { return t_err.c_str(); }

void gk_string_free(char* s) { std::free(s); }

int gk_config_create(gk_config** out) {
  if (!out) return null_arg("out");
  return guarded(GK_ERR_CONFIG, [&] { *out = new gk_config(); });
}

int gk_config_load(const char* path, gk_config** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded(GK_ERR_CONFIG, [&] {
    gk::ExperimentConfig cfg = gk::parse_config_file(path);
    *out = new gk_config{std::move(cfg)};
  });
}

void gk_config_free(gk_config* cfg) { delete cfg; }

int gk_config_set(gk_config* cfg, const char* key, const char* value) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded(GK_ERR_CONFIG,
                 [&] { gk::set_config_key(cfg->cfg, key, value); });
}

int gk_config_get(const gk_config* cfg, const char* key, char** value) {
  if (!cfg) return null_arg("cfg");
  if (!key) return null_arg("key");
  return guarded(GK_ERR_CONFIG, [&] {
    for (const auto& [k, v] : gk::config_items(cfg->cfg)) {
      if (k == key) {
        set_out(value, v);
        return;
      }
    }
    throw std::runtime_error(std::string("unknown config key: ") + key);
  });
}

int gk_config_resolve(gk_config* cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded(GK_ERR_CONFIG, [&] { gk::resolve_config(cfg->cfg); });
}

int gk_config_dump(const gk_config* cfg, char** text) {
  if (!cfg) return null_arg("cfg");
  return guarded(GK_ERR_CONFIG,
                 [&] { set_out(text, gk::config_to_string(cfg->cfg)); });
}

int gk_train(const gk_config* cfg, int resume, char** summary_json) {
  if (!cfg) return null_arg("cfg");
  return guarded(GK_ERR_RUN, [&] {
    gk::RunResult r = gk::train_run(cfg->cfg, resume != 0);
    set_out(summary_json, gk::summary_to_json(r.summary));
  });
}

int gk_sweep(const gk_config* base, const char* lrs, const char* seeds,
             char** rows_csv, char** fits_json) {
  if (!base) return null_arg("base");
  if (!lrs) return null_arg("lrs");
  if (!seeds) return null_arg("seeds");
  std::vector<double> lr_list;
  std::vector<uint64_t> seed_list;
  int rc = guarded(GK_ERR_CONFIG, [&] {
    lr_list = parse_double_list(lrs, "lrs");
    seed_list = parse_seed_list(seeds);
  });
  if (rc != GK_OK) return rc;
  return guarded(GK_ERR_RUN, [&] {
    gk::SweepResult s = gk::sweep(base->cfg, lr_list, seed_list);
    set_out(rows_csv, gk::run_rows_csv(s.rows));
    set_out(fits_json, gk::fit_json(s));
  });
}

int gk_dose(const gk_config* base, const char* grid, const char* seeds,
            char** table_csv) {
  if (!base) return null_arg("base");
  if (!grid) return null_arg("grid");
  if (!seeds) return null_arg("seeds");
  std::vector<std::pair<std::string, double>> cells;
  std::vector<uint64_t> seed_list;
  int rc = guarded(GK_ERR_CONFIG, [&] {
    cells = parse_grid(grid);
    seed_list = parse_seed_list(seeds);
  });
  if (rc != GK_OK) return rc;
  return guarded(GK_ERR_RUN, [&] {
    std::vector<gk::DoseCell> table = gk::dose_sweep(base->cfg, cells, seed_list);
    set_out(table_csv, gk::dose_csv(table));
  });
}

int gk_analyze(const char* run_dir, int k_basis, int n_null, uint64_t seed,
               const char* out_dir, char** report_json) {
  if (!run_dir) return null_arg("run_dir");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::string root = gk::resolve_run_root(default_output_dir(), run_dir);
    gk::AnalysisResult a = gk::analyze_run(root, k_basis, n_null, seed);
    if (out_dir && *out_dir) gk::write_analysis(a, out_dir);
    set_out(report_json, analysis_report_json(a));
  });
}

int gk_export(const char* run_dir, const char* out_dir) {
  if (!run_dir) return null_arg("run_dir");
  if (!out_dir) return null_arg("out_dir");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::string root = gk::resolve_run_root(default_output_dir(), run_dir);
    gk::export_plotdata(root, out_dir);
  });
}

int gk_detect_grok(const int64_t* steps, const double* test_acc, int n,
                   double threshold, int sustained, int64_t* grok_step) {
  if (!steps) return null_arg("steps");
  if (!test_acc) return null_arg("test_acc");
  if (!grok_step) return null_arg("grok_step");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::vector<gk::SeriesPoint> series(static_cast<size_t>(n > 0 ? n : 0));
    for (int i = 0; i < n; ++i) series[i] = {steps[i], test_acc[i]};
    gk::DetectorConfig cfg;
    cfg.acc_threshold = threshold;
    cfg.n_sustained = sustained;
    *grok_step = gk::detect_grok(series, cfg);
  });
}

int gk_detect_onset(const int64_t* steps, const double* defect_median, int n,
                    double multiplier, double floor_value, int baseline_window,
                    int64_t* onset_step) {
  if (!steps) return null_arg("steps");
  if (!defect_median) return null_arg("defect_median");
  if (!onset_step) return null_arg("onset_step");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::vector<gk::SeriesPoint> series(static_cast<size_t>(n > 0 ? n : 0));
    for (int i = 0; i < n; ++i) series[i] = {steps[i], defect_median[i]};
    gk::DetectorConfig cfg;
    cfg.onset_multiplier = multiplier;
    cfg.onset_floor = floor_value;
    cfg.baseline_window = baseline_window;
    *onset_step = gk::detect_onset(series, cfg, "gk_detect_onset");
  });
}

int gk_lead_time(int64_t grok_step, int64_t onset_step, double* delta_t,
                 double* fraction) {
  return guarded(GK_ERR_ANALYSIS, [&] {
    gk::LeadTime lt = gk::lead_time(grok_step, onset_step);
    if (!lt.valid)
      throw std::runtime_error(
          "lead time undefined: step absent or negative lead");
    if (delta_t) *delta_t = lt.delta_t;
    if (fraction) *fraction = lt.fraction;
  });
}

int gk_fit_power_law(const double* t_grok, const double* delta_t, int n,
                     int nonlinear, double* c, double* alpha, double* r2,
                     double* se_alpha) {
  if (!t_grok) return null_arg("t_grok");
  if (!delta_t) return null_arg("delta_t");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::vector<gk::ScalingPoint> points(static_cast<size_t>(n > 0 ? n : 0));
    for (int i = 0; i < n; ++i) points[i] = {t_grok[i], delta_t[i]};
    gk::ScalingFit fit = gk::fit_power_law(
        points, nonlinear ? gk::FitMethod::nonlinear_ls
                          : gk::FitMethod::ols_loglog);
    if (!fit.valid)
      throw std::runtime_error(
          "power-law fit failed: fewer than 3 usable points or no "
          "convergence");
    if (c) *c = fit.c;
    if (alpha) *alpha = fit.alpha;
    if (r2) *r2 = fit.r2;
    if (se_alpha) *se_alpha = fit.se_alpha;
  });
}

int gk_fit_run_table(const char* csv_path, char** fits_json) {
  if (!csv_path) return null_arg("csv_path");
  return guarded(GK_ERR_ANALYSIS, [&] {
    std::vector<gk::RunRow> rows = gk::read_run_rows(csv_path);
    gk::SweepResult s = gk::fits_from_rows(std::move(rows));
    set_out(fits_json, gk::fit_json(s));
  });
}

}  // extern "C"
