#include "config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "intervene.hpp"

namespace gk {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Trim to the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char t[64];
    std::snprintf(t, sizeof t, "%.*g", prec, v);
    if (std::strtod(t, nullptr) == v) return t;
  }
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad number '" + v +
                             "'");
  }
  if (pos != v.size())
    throw std::runtime_error("config key '" + key + "': bad number '" + v +
                             "'");
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long long out;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad integer '" + v +
                             "'");
  }
  if (pos != v.size())
    throw std::runtime_error("config key '" + key + "': bad integer '" + v +
                             "'");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  size_t pos = 0;
  unsigned long long out;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': bad integer '" + v +
                             "'");
  }
  if (pos != v.size() || (!v.empty() && v[0] == '-'))
    throw std::runtime_error("config key '" + key + "': bad integer '" + v +
                             "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config key '" + key + "': bad boolean '" + v +
                           "'");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define STR_FIELD(name) \
  {#name, [](const ExperimentConfig& c) { return c.name; }, \
   [](ExperimentConfig& c, const std::string& v) { c.name = v; }}
#define DBL_FIELD(name) \
  {#name, [](const ExperimentConfig& c) { return fmt_double(c.name); }, \
   [](ExperimentConfig& c, const std::string& v) { \
     c.name = parse_double(#name, v); \
   }}
#define INT_FIELD(name) \
  {#name, \
   [](const ExperimentConfig& c) { return std::to_string(c.name); }, \
   [](ExperimentConfig& c, const std::string& v) { \
     c.name = static_cast<decltype(c.name)>(parse_int(#name, v)); \
   }}
#define UINT_FIELD(name) \
  {#name, \
   [](const ExperimentConfig& c) { return std::to_string(c.name); }, \
   [](ExperimentConfig& c, const std::string& v) { \
     c.name = parse_uint(#name, v); \
   }}
#define BOOL_FIELD(name) \
  {#name, \
   [](const ExperimentConfig& c) { \
     return std::string(c.name ? "true" : "false"); \
   }, \
   [](ExperimentConfig& c, const std::string& v) { \
     c.name = parse_bool(#name, v); \
   }}

const std::vector<Field>& fields() {
  static const std::vector<Field> t = {
      STR_FIELD(task),
      STR_FIELD(run_id),
      STR_FIELD(output_dir),
      STR_FIELD(data_path),
      INT_FIELD(d_model),
      INT_FIELD(n_layers),
      INT_FIELD(n_heads),
      INT_FIELD(d_ff),
      DBL_FIELD(lr),
      DBL_FIELD(weight_decay),
      DBL_FIELD(clip_norm),
      INT_FIELD(max_steps),
      UINT_FIELD(seed),
      INT_FIELD(batch_size),
      DBL_FIELD(init_scale),
      STR_FIELD(init_scope),
      INT_FIELD(n_train),
      INT_FIELD(eval_test_n),
      INT_FIELD(eval_interval),
      INT_FIELD(probe_interval),
      INT_FIELD(snapshot_interval),
      INT_FIELD(delta_interval),
      DBL_FIELD(eta_comm),
      INT_FIELD(k_meas),
      INT_FIELD(probe_batch),
      DBL_FIELD(adapt_floor),
      DBL_FIELD(adapt_target),
      DBL_FIELD(acc_threshold),
      INT_FIELD(n_sustained),
      DBL_FIELD(onset_multiplier),
      DBL_FIELD(onset_floor),
      INT_FIELD(baseline_window),
      BOOL_FIELD(early_stop),
      INT_FIELD(early_stop_margin),
      STR_FIELD(condition),
      DBL_FIELD(strength),
      INT_FIELD(trigger_step),
      INT_FIELD(period),
      STR_FIELD(basis_run),
      INT_FIELD(basis_k),
  };
  return t;
}

#undef STR_FIELD
#undef DBL_FIELD
#undef INT_FIELD
#undef UINT_FIELD
#undef BOOL_FIELD

const Field* find_field(const std::string& key) {
  for (const Field& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      set_config_key(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return cfg;
}

void set_config_key(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr)
    throw std::runtime_error("unknown config key '" + key + "'");
  f->set(cfg, value);
}

std::vector<std::pair<std::string, std::string>> config_items(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

void resolve_config(ExperimentConfig& cfg) {
  if (cfg.task != "dyck" && cfg.task != "scan")
    throw std::runtime_error("config: unknown task '" + cfg.task +
                             "' (expected dyck or scan)");
  const bool dyck = cfg.task == "dyck";

  if (cfg.d_model == 0) cfg.d_model = dyck ? 128 : 256;
  if (cfg.n_layers == 0) cfg.n_layers = dyck ? 2 : 3;
  if (cfg.n_heads == 0) cfg.n_heads = 4;
  if (cfg.d_ff == 0) cfg.d_ff = dyck ? 256 : 512;

  if (cfg.lr <= 0) throw std::runtime_error("config: lr must be positive");
  if (cfg.weight_decay < 0)
    throw std::runtime_error("config: weight_decay must be >= 0");

  if (cfg.n_train == 0) cfg.n_train = dyck ? 50 : 2048;
  if (cfg.batch_size == 0) cfg.batch_size = dyck ? cfg.n_train : 128;
  if (cfg.batch_size < 1 || cfg.batch_size > cfg.n_train)
    throw std::runtime_error("config: batch_size must lie in [1, n_train]");
  if (cfg.eval_test_n == 0) cfg.eval_test_n = dyck ? 1000 : 512;

  if (cfg.init_scale == 0) cfg.init_scale = dyck ? 5.0 : 1.0;
  if (cfg.init_scale < 0)
    throw std::runtime_error("config: init_scale must be positive");
  if (cfg.init_scope.empty()) cfg.init_scope = "all";
  if (cfg.init_scope != "all" && cfg.init_scope != "attention" &&
      cfg.init_scope != "qk")
    throw std::runtime_error("config: init_scope must be all|attention|qk");

  if (cfg.max_steps == 0) {
    if (dyck) {
      if (cfg.lr >= 1e-2) cfg.max_steps = 20000;
      else if (cfg.lr >= 3e-3) cfg.max_steps = 30000;
      else if (cfg.lr >= 1e-3) cfg.max_steps = 50000;
      else if (cfg.lr >= 5e-4) cfg.max_steps = 100000;
      else if (cfg.lr >= 1e-4) cfg.max_steps = 200000;
      else cfg.max_steps = 300000;
    } else {
      if (cfg.lr >= 1e-4) cfg.max_steps = 100000;
      else if (cfg.lr >= 3e-5) cfg.max_steps = 150000;
      else cfg.max_steps = 200000;
    }
  }
  if (cfg.max_steps < 1)
    throw std::runtime_error("config: max_steps must be positive");

  if (cfg.probe_interval == 0) cfg.probe_interval = cfg.lr >= 5e-4 ? 100 : 500;
  if (cfg.eval_interval < 1 || cfg.probe_interval < 1 ||
      cfg.snapshot_interval < 1)
    throw std::runtime_error("config: intervals must be positive");
  if (cfg.delta_interval == 0) {
    cfg.delta_interval = cfg.probe_interval;
    while (cfg.delta_interval < cfg.snapshot_interval)
      cfg.delta_interval += cfg.probe_interval;
  }
  if (cfg.delta_interval % cfg.probe_interval != 0)
    throw std::runtime_error(
        "config: delta_interval must be a multiple of probe_interval");

  if (cfg.k_meas < 1) throw std::runtime_error("config: k_meas must be >= 1");
  if (cfg.probe_batch == 0) cfg.probe_batch = dyck ? 16 : 64;
  if (2 * cfg.probe_batch > cfg.n_train)
    throw std::runtime_error(
        "config: probe pairs need 2*probe_batch <= n_train");
  if (cfg.baseline_window < 1)
    throw std::runtime_error("config: baseline_window must be >= 1");
  if (cfg.n_sustained < 1)
    throw std::runtime_error("config: n_sustained must be >= 1");

  // Validates the condition name; strength range checked where it applies.
  Condition cond = condition_from_name(cfg.condition);
  if (cfg.strength < 0)
    throw std::runtime_error("config: strength must be >= 0");
  if (cond == Condition::penalty_1b && cfg.strength > 1)
    throw std::runtime_error("config: penalty strength must lie in [0,1]");
  if (cfg.period < 1) throw std::runtime_error("config: period must be >= 1");
  if (cfg.basis_k < 1)
    throw std::runtime_error("config: basis_k must be >= 1");
  if ((cond == Condition::project_1b || cond == Condition::penalty_1b) &&
      cfg.basis_run.empty())
    throw std::runtime_error(
        "config: 1B conditions need basis_run (baseline run id)");

  if (cfg.output_dir.empty()) {
    const char* env = std::getenv("GROKKIT_OUT");
    cfg.output_dir = env != nullptr && env[0] != '\0' ? env : "runs";
  }
  if (cfg.task == "scan" && cfg.data_path.empty())
    cfg.data_path = cfg.output_dir + "/scan_simple.txt";
  if (cfg.run_id.empty()) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s_lr%g_s%llu", cfg.task.c_str(), cfg.lr,
                  (unsigned long long)cfg.seed);
    cfg.run_id = buf;
    if (cond != Condition::baseline) {
      std::snprintf(buf, sizeof buf, "_%s_%g", cfg.condition.c_str(),
                    cfg.strength);
      cfg.run_id += buf;
    }
  }
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const Field& f : fields()) {
    const std::string key = f.key;
    if (key == "run_id" || key == "output_dir") continue;
    mix(key);
    mix("=");
    mix(f.get(cfg));
    mix("\n");
  }
  return h;
}

std::string config_to_string(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_items(cfg)) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

}  // namespace gk
