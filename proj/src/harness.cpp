#include "harness.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "archive.hpp"
#include "intervene.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "probes.hpp"
#include "rng.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace gk {

namespace {

std::string join_flags(const std::vector<std::string>& flags) {
  std::string out;
  for (const std::string& f : flags) {
    if (!out.empty()) out += ';';
    out += f;
  }
  return out;
}

std::vector<std::string> split_flags(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start < s.size()) {
    size_t end = s.find(';', start);
    if (end == std::string::npos) end = s.size();
    if (end > start) out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

RunPaths run_paths(const std::string& output_dir, const std::string& run_id) {
  RunPaths p;
  p.root = output_dir + "/" + run_id;
  p.metrics_jsonl = p.root + "/metrics.jsonl";
  p.metrics_csv = p.root + "/metrics.csv";
  p.summary_json = p.root + "/summary.json";
  p.config_txt = p.root + "/config.txt";
  p.checkpoint = p.root + "/checkpoint.bin";
  p.weights_dir = p.root + "/snapshots";
  p.grads_dir = p.root + "/grad_accum";
  p.deltas_dir = p.root + "/deltas";
  return p;
}

std::string resolve_run_root(const std::string& output_dir,
                             const std::string& run_ref) {
  if (run_ref.empty())
    throw std::runtime_error("resolve_run_root: empty run reference");
  if (fs::exists(fs::path(run_ref) / "config.txt")) return run_ref;
  const std::string under = output_dir + "/" + run_ref;
  if (fs::exists(fs::path(under) / "config.txt")) return under;
  throw std::runtime_error("resolve_run_root: no run found at " + run_ref +
                           " or " + under);
}

// ----------------------------------------------------------------- deltas

namespace {

std::string delta_path(const std::string& dir, int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "delta_%012" PRId64 ".bin", step);
  return dir + "/" + buf;
}

}  // namespace

DeltaStore DeltaStore::create(const std::string& dir) {
  fs::create_directories(dir);
  DeltaStore d;
  d.dir_ = dir;
  return d;
}

DeltaStore DeltaStore::open(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("delta_store: no directory " + dir);
  DeltaStore d;
  d.dir_ = dir;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    int64_t step = -1;
    if (std::sscanf(name.c_str(), "delta_%" PRId64 ".bin", &step) == 1)
      d.steps_.push_back(step);
  }
  std::sort(d.steps_.begin(), d.steps_.end());
  return d;
}

void DeltaStore::record(int64_t step,
                        const std::vector<std::vector<float>>& deltas) {
  if (deltas.empty()) return;
  const int64_t k = int64_t(deltas.size());
  const int64_t dim = int64_t(deltas[0].size());
  for (const std::vector<float>& d : deltas)
    if (int64_t(d.size()) != dim)
      throw std::runtime_error("delta_store: ragged sample lengths");
  const std::string path = delta_path(dir_, step);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("delta_store: cannot open " + path);
  out.write(reinterpret_cast<const char*>(&k), sizeof k);
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  for (const std::vector<float>& d : deltas)
    out.write(reinterpret_cast<const char*>(d.data()),
              std::streamsize(sizeof(float) * size_t(dim)));
  out.close();
  if (!out) throw std::runtime_error("delta_store: write failed: " + path);
  auto it = std::lower_bound(steps_.begin(), steps_.end(), step);
  if (it == steps_.end() || *it != step) steps_.insert(it, step);
}

std::vector<DeltaSample> DeltaStore::read(int64_t step) const {
  const std::string path = delta_path(dir_, step);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("delta_store: cannot open " + path);
  int64_t k = 0, dim = 0;
  in.read(reinterpret_cast<char*>(&k), sizeof k);
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  if (!in || k <= 0 || dim <= 0)
    throw std::runtime_error("delta_store: bad header in " + path);
  const size_t n_samples = size_t(k);
  std::vector<DeltaSample> out(n_samples);
  for (int64_t i = 0; i < k; ++i) {
    out[size_t(i)].step = step;
    out[size_t(i)].delta.resize(size_t(dim));
    in.read(reinterpret_cast<char*>(out[size_t(i)].delta.data()),
            std::streamsize(sizeof(float) * size_t(dim)));
  }
  if (!in) throw std::runtime_error("delta_store: short read in " + path);
  return out;
}

std::vector<DeltaSample> DeltaStore::read_all() const {
  std::vector<DeltaSample> out;
  for (int64_t s : steps_) {
    std::vector<DeltaSample> part = read(s);
    for (DeltaSample& d : part) out.push_back(std::move(d));
  }
  return out;
}

void DeltaStore::truncate_after(int64_t keep_through) {
  std::vector<int64_t> kept;
  for (int64_t s : steps_) {
    if (s <= keep_through) {
      kept.push_back(s);
    } else {
      fs::remove(delta_path(dir_, s));
    }
  }
  steps_ = std::move(kept);
}

// ------------------------------------------------------------------ tasks

namespace {

class DyckRuntime final : public TaskRuntime {
 public:
  explicit DyckRuntime(const ExperimentConfig& cfg) : model_(model_cfg(cfg)) {
    DyckConfig dc;
    dc.n_train = cfg.n_train;
    data_ = generate_dyck(dc);
    int64_t n_eval = cfg.eval_test_n < 0 ? int64_t(data_.test.size())
                                         : int64_t(cfg.eval_test_n);
    n_eval = std::min(n_eval, int64_t(data_.test.size()));
    test_sub_.assign(data_.test.begin(), data_.test.begin() + n_eval);
  }

  const ParamSet& params() const override { return model_.params(); }
  std::vector<float> init_theta(uint64_t seed) const override {
    return model_.init(seed);
  }
  std::vector<std::string> snapshot_names() const override {
    return model_.default_snapshot_matrices();
  }
  int64_t n_train() const override { return int64_t(data_.train.size()); }
  double loss_and_grad(const float* theta, const Batch& b,
                       float* grad) override {
    return model_.loss_and_grad(theta, b, grad);
  }
  Batch make_train_batch(const std::vector<int64_t>& idx) const override {
    return make_dyck_batch(data_.train, idx);
  }
  EvalResult eval_train(const float* theta) override {
    return model_.evaluate(theta, data_.train);
  }
  EvalResult eval_test(const float* theta) override {
    return model_.evaluate(theta, test_sub_);
  }

 private:
  static DyckModelConfig model_cfg(const ExperimentConfig& cfg) {
    DyckModelConfig mc;
    mc.d_model = cfg.d_model;
    mc.n_layers = cfg.n_layers;
    mc.n_heads = cfg.n_heads;
    mc.d_ff = cfg.d_ff;
    return mc;
  }

  DyckModel<float> model_;
  DyckData data_;
  std::vector<DyckExample> test_sub_;
};

class ScanRuntime final : public TaskRuntime {
 public:
  explicit ScanRuntime(const ExperimentConfig& cfg) {
    if (!fs::exists(cfg.data_path)) {
      const fs::path parent = fs::path(cfg.data_path).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      write_scan_dataset(cfg.data_path);
    }
    ScanConfig sc;
    sc.path = cfg.data_path;
    sc.n_train = cfg.n_train;
    data_ = load_scan(sc);
    ScanModelConfig mc;
    mc.d_model = cfg.d_model;
    mc.n_layers = cfg.n_layers;
    mc.n_heads = cfg.n_heads;
    mc.d_ff = cfg.d_ff;
    mc.src_vocab = int(data_.vocab.src.size());
    mc.act_vocab = int(data_.vocab.act.size());
    mc.max_cmd = data_.max_cmd + 1;
    mc.max_act = data_.max_act + 1;
    model_ = std::make_unique<ScanModel<float>>(mc);
    int64_t n_eval = cfg.eval_test_n < 0 ? int64_t(data_.test.size())
                                         : int64_t(cfg.eval_test_n);
    n_eval = std::min(n_eval, int64_t(data_.test.size()));
    test_sub_.assign(data_.test.begin(), data_.test.begin() + n_eval);
  }

  const ParamSet& params() const override { return model_->params(); }
  std::vector<float> init_theta(uint64_t seed) const override {
    return model_->init(seed);
  }
  std::vector<std::string> snapshot_names() const override {
    return model_->default_snapshot_matrices();
  }
  int64_t n_train() const override { return int64_t(data_.train.size()); }
  double loss_and_grad(const float* theta, const Batch& b,
                       float* grad) override {
    return model_->loss_and_grad(theta, b, grad);
  }
  Batch make_train_batch(const std::vector<int64_t>& idx) const override {
    return make_scan_batch(data_.train, idx, data_.vocab);
  }
  EvalResult eval_train(const float* theta) override {
    return model_->evaluate(theta, data_.train, data_.vocab);
  }
  EvalResult eval_test(const float* theta) override {
    return model_->evaluate(theta, test_sub_, data_.vocab);
  }

 private:
  ScanData data_;
  std::unique_ptr<ScanModel<float>> model_;
  std::vector<ScanExample> test_sub_;
};

}  // namespace

std::unique_ptr<TaskRuntime> make_task_runtime(const ExperimentConfig& cfg) {
  if (cfg.task == "dyck") return std::make_unique<DyckRuntime>(cfg);
  if (cfg.task == "scan") return std::make_unique<ScanRuntime>(cfg);
  throw std::runtime_error("make_task_runtime: unknown task " + cfg.task);
}

void scale_init(std::vector<float>& theta, const ParamSet& ps, double scale,
                const std::string& scope) {
  if (scale == 1.0) return;
  for (const ParamInfo& p : ps.infos()) {
    if (p.name.ends_with(".g") || p.name.ends_with(".b")) continue;
    if (scope == "attention") {
      const bool attn = p.name.find(".attn.") != std::string::npos ||
                        p.name.find(".self.") != std::string::npos ||
                        p.name.find(".cross.") != std::string::npos;
      if (!attn) continue;
    } else if (scope == "qk") {
      if (!p.name.ends_with(".wq") && !p.name.ends_with(".wk")) continue;
    } else if (scope != "all") {
      throw std::runtime_error("scale_init: unknown scope " + scope);
    }
    for (int64_t i = 0; i < p.n; ++i)
      theta[size_t(p.off + i)] *= float(scale);
  }
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr char kCkptMagic[8] = {'G', 'K', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ofstream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get(std::ifstream& i, T& v) {
  i.read(reinterpret_cast<char*>(&v), sizeof v);
}

void put_floats(std::ofstream& o, const std::vector<float>& v) {
  o.write(reinterpret_cast<const char*>(v.data()),
          std::streamsize(sizeof(float) * v.size()));
}

void get_floats(std::ifstream& i, std::vector<float>& v, int64_t n) {
  v.resize(size_t(n));
  i.read(reinterpret_cast<char*>(v.data()),
         std::streamsize(sizeof(float) * size_t(n)));
}

struct CheckpointData {
  int64_t step = 0;
  int64_t adam_t = 0;
  uint64_t stream_rng = 0;
  int64_t stream_epoch = 0;
  int64_t stream_pos = 0;
  std::vector<int64_t> perm;
  uint64_t probe_rng = 0;
  uint64_t noise_rng = 0;
  bool noise_flagged = false;
  bool kick_done = false;
  std::vector<float> theta, m, v, gsum;
  std::string flags;
};

void save_checkpoint(const std::string& path, uint64_t hash,
                     const CheckpointData& c) {
  const std::string tmp = path + ".tmp";
  std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
  if (!o) throw std::runtime_error("checkpoint: cannot open " + tmp);
  o.write(kCkptMagic, 8);
  put(o, hash);
  put(o, c.step);
  const int64_t n = int64_t(c.theta.size());
  put(o, n);
  put(o, c.adam_t);
  put(o, c.stream_rng);
  put(o, c.stream_epoch);
  put(o, c.stream_pos);
  const int64_t plen = int64_t(c.perm.size());
  put(o, plen);
  o.write(reinterpret_cast<const char*>(c.perm.data()),
          std::streamsize(sizeof(int64_t) * c.perm.size()));
  put(o, c.probe_rng);
  put(o, c.noise_rng);
  const uint8_t nf = c.noise_flagged ? 1 : 0, kd = c.kick_done ? 1 : 0;
  put(o, nf);
  put(o, kd);
  put_floats(o, c.theta);
  put_floats(o, c.m);
  put_floats(o, c.v);
  put_floats(o, c.gsum);
  const uint32_t flen = uint32_t(c.flags.size());
  put(o, flen);
  o.write(c.flags.data(), std::streamsize(c.flags.size()));
  o.close();
  if (!o) throw std::runtime_error("checkpoint: write failed: " + tmp);
  fs::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path, uint64_t expect_hash,
                               int64_t expect_n) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  i.read(magic, 8);
  if (!i || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t hash = 0;
  get(i, hash);
  if (hash != expect_hash)
    throw std::runtime_error("checkpoint: config hash mismatch in " + path);
  CheckpointData c;
  get(i, c.step);
  int64_t n = 0;
  get(i, n);
  if (n != expect_n)
    throw std::runtime_error("checkpoint: parameter count mismatch in " +
                             path);
  get(i, c.adam_t);
  get(i, c.stream_rng);
  get(i, c.stream_epoch);
  get(i, c.stream_pos);
  int64_t plen = 0;
  get(i, plen);
  if (plen < 0 || plen > (int64_t(1) << 32))
    throw std::runtime_error("checkpoint: bad permutation length in " + path);
  c.perm.resize(size_t(plen));
  i.read(reinterpret_cast<char*>(c.perm.data()),
         std::streamsize(sizeof(int64_t) * c.perm.size()));
  get(i, c.probe_rng);
  get(i, c.noise_rng);
  uint8_t nf = 0, kd = 0;
  get(i, nf);
  get(i, kd);
  c.noise_flagged = nf != 0;
  c.kick_done = kd != 0;
  get_floats(i, c.theta, n);
  get_floats(i, c.m, n);
  get_floats(i, c.v, n);
  get_floats(i, c.gsum, n);
  uint32_t flen = 0;
  get(i, flen);
  c.flags.resize(flen);
  i.read(c.flags.data(), std::streamsize(flen));
  if (!i) throw std::runtime_error("checkpoint: short read in " + path);
  return c;
}

}  // namespace

// -------------------------------------------------------------- train_run

RunResult train_run(const ExperimentConfig& cfg_in, bool resume,
                    int64_t halt_after) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = cfg_in;
  resolve_config(cfg);
  const RunPaths paths = run_paths(cfg.output_dir, cfg.run_id);
  const uint64_t hash = config_hash(cfg);

  std::unique_ptr<TaskRuntime> task = make_task_runtime(cfg);
  const ParamSet& ps = task->params();
  const int64_t n = ps.total();

  AdamW<float> opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  BatchStream stream(task->n_train(), cfg.batch_size,
                     named_stream(cfg.seed, "data_order"));
  Rng probe_rng = named_stream(cfg.seed, "probe_pairs");

  std::vector<std::string> flags;
  auto add_flag = [&flags](const std::string& f) {
    if (std::find(flags.begin(), flags.end(), f) == flags.end())
      flags.push_back(f);
  };

  // intervention setup
  const Condition cond = condition_from_name(cfg.condition);
  const bool active = cond != Condition::baseline && cfg.strength != 0.0;
  NoiseHook noise;
  bool use_noise = false, use_project = false, use_penalty = false;
  MatrixBases bases;
  std::vector<std::vector<float>> kick_deltas;
  int64_t kick_trigger = -1;
  bool kick_pending = false, kick_done = false;
  if (active) {
    if (cond == Condition::noise_1a) {
      use_noise = true;
      noise.period = cfg.period;
      noise.nu = cfg.strength;
      noise.rng = named_stream(cfg.seed, "intervention");
    } else {
      const std::string broot =
          resolve_run_root(cfg.output_dir, cfg.basis_run);
      if (cond == Condition::kick_1a) {
        kick_trigger = cfg.trigger_step;
        if (kick_trigger < 0)
          kick_trigger =
              read_summary_json(broot + "/summary.json").onset_step;
        if (kick_trigger < 0) {
          add_flag("kick_no_trigger");
        } else {
          DeltaStore ds = DeltaStore::open(broot + "/deltas");
          if (ds.steps().empty()) {
            add_flag("kick_no_deltas");
          } else {
            int64_t pick = ds.steps().front();
            for (int64_t s : ds.steps())
              if (s <= kick_trigger) pick = s;
            for (DeltaSample& d : ds.read(pick))
              kick_deltas.push_back(std::move(d.delta));
            kick_pending = true;
          }
        }
      } else {
        SnapshotArchive barch = SnapshotArchive::open(broot + "/snapshots");
        bases = attention_trajectory_bases(barch, cfg.basis_k);
        use_project = cond == Condition::project_1b;
        use_penalty = cond == Condition::penalty_1b;
      }
    }
  }

  // run state
  std::vector<float> theta, gsum;
  SnapshotArchive weights, grads;
  DeltaStore deltas;
  MetricsWriter writer;
  std::vector<MetricRow> rows;
  int64_t start_step = 0;
  bool skip_first_measure = false;

  if (resume) {
    CheckpointData c = load_checkpoint(paths.checkpoint, hash, n);
    theta = std::move(c.theta);
    gsum = std::move(c.gsum);
    opt.m = std::move(c.m);
    opt.v = std::move(c.v);
    opt.t = c.adam_t;
    stream.restore(c.stream_rng, c.stream_epoch, c.stream_pos,
                   std::move(c.perm));
    probe_rng.state = c.probe_rng;
    noise.rng.state = c.noise_rng;
    noise.flagged_zero_grad = c.noise_flagged;
    kick_done = c.kick_done;
    for (const std::string& f : split_flags(c.flags)) add_flag(f);
    weights = SnapshotArchive::open(paths.weights_dir);
    weights.truncate_after(c.step);
    grads = SnapshotArchive::open(paths.grads_dir);
    grads.truncate_after(c.step);
    deltas = DeltaStore::open(paths.deltas_dir);
    deltas.truncate_after(c.step);
    truncate_metrics_after(paths.metrics_jsonl, paths.metrics_csv, c.step);
    rows = read_metric_stream(paths.metrics_jsonl);
    writer.open(paths.metrics_jsonl, paths.metrics_csv, /*append=*/true);
    start_step = c.step;
    skip_first_measure = true;
  } else {
    if (fs::exists(paths.root)) fs::remove_all(paths.root);
    fs::create_directories(paths.root);
    std::ofstream cf(paths.config_txt, std::ios::trunc);
    for (const auto& [key, value] : config_items(cfg))
      cf << key << " = " << value << '\n';
    cf.close();
    if (!cf)
      throw std::runtime_error("train_run: cannot write " + paths.config_txt);
    theta = task->init_theta(cfg.seed);
    scale_init(theta, ps, cfg.init_scale, cfg.init_scope);
    opt.init(n);
    gsum.assign(size_t(n), 0.0f);
    std::vector<MatrixSpec> mats;
    for (const std::string& name : task->snapshot_names()) {
      const ParamInfo& pi = ps.at(name);
      MatrixSpec ms;
      ms.name = name;
      ms.rows = int(pi.shape[0]);
      ms.cols = pi.ndim >= 2 ? int(pi.shape[1]) : 1;
      ms.off = pi.off;
      mats.push_back(ms);
    }
    weights = SnapshotArchive::create(paths.weights_dir, cfg.run_id,
                                      cfg.snapshot_interval, mats);
    grads = SnapshotArchive::create(paths.grads_dir, cfg.run_id,
                                    cfg.snapshot_interval, mats);
    deltas = DeltaStore::create(paths.deltas_dir);
    writer.open(paths.metrics_jsonl, paths.metrics_csv, /*append=*/false);
  }

  GradFn<float> gfn = [&task](const float* th, const Batch& b, float* g) {
    return task->loss_and_grad(th, b, g);
  };
  std::function<Batch(const std::vector<int64_t>&)> mk =
      [&task](const std::vector<int64_t>& idx) {
        return task->make_train_batch(idx);
      };
  DefectProbeConfig pcfg;
  pcfg.eta_comm = cfg.eta_comm;
  pcfg.k_meas = cfg.k_meas;
  pcfg.probe_batch = cfg.probe_batch;
  pcfg.adapt_floor = cfg.adapt_floor;
  pcfg.adapt_target = cfg.adapt_target;
  pcfg.interval = int(cfg.probe_interval);
  DetectorConfig dcfg;
  dcfg.acc_threshold = cfg.acc_threshold;
  dcfg.n_sustained = cfg.n_sustained;
  dcfg.onset_multiplier = cfg.onset_multiplier;
  dcfg.onset_floor = cfg.onset_floor;
  dcfg.baseline_window = cfg.baseline_window;

  // online grok confirmation for early stopping
  int consec = 0;
  int64_t confirm = -1;
  int64_t last_eval = -1;
  auto feed_eval = [&](int64_t s, double te) {
    last_eval = s;
    if (te >= cfg.acc_threshold) {
      ++consec;
      if (consec >= cfg.n_sustained && confirm < 0) confirm = s;
    } else {
      consec = 0;
    }
  };
  for (const MetricRow& r : rows)
    if (r.has_eval) feed_eval(r.step, r.test_acc);

  auto make_ckpt = [&](int64_t step) {
    CheckpointData c;
    c.step = step;
    c.adam_t = opt.t;
    c.stream_rng = stream.rng_state();
    c.stream_epoch = stream.epoch();
    c.stream_pos = stream.pos();
    c.perm = stream.perm();
    c.probe_rng = probe_rng.state;
    c.noise_rng = noise.rng.state;
    c.noise_flagged = noise.flagged_zero_grad;
    c.kick_done = kick_done;
    c.theta = theta;
    c.m = opt.m;
    c.v = opt.v;
    c.gsum = gsum;
    c.flags = join_flags(flags);
    save_checkpoint(paths.checkpoint, hash, c);
  };

  std::vector<float> grad(theta.size());
  bool aborted = false, halted = false;
  int64_t step = start_step;
  for (;; ++step) {
    if (!(skip_first_measure && step == start_step)) {
      MetricRow row;
      row.step = step;
      if (step % cfg.eval_interval == 0) {
        EvalResult tr = task->eval_train(theta.data());
        EvalResult te = task->eval_test(theta.data());
        row.has_eval = true;
        row.train_loss = tr.loss;
        row.train_acc = tr.accuracy;
        row.test_acc = te.accuracy;
        feed_eval(step, te.accuracy);
      }
      if (step % cfg.probe_interval == 0) {
        const bool retain = step % cfg.delta_interval == 0;
        DefectMeasurement<float> m =
            probe_at_step<float>(theta.data(), n, gfn, task->n_train(), mk,
                                 pcfg, probe_rng, step, retain);
        if (m.valid) {
          row.has_defect = true;
          row.defect_median = m.median;
          row.defect_q25 = m.p25;
          row.defect_q75 = m.p75;
        } else {
          add_flag("probe_invalid");
        }
        if (retain) {
          std::vector<std::vector<float>> kept;
          for (DefectSample<float>& s : m.samples)
            if (s.valid && !s.delta.empty())
              kept.push_back(std::move(s.delta));
          if (!kept.empty()) deltas.record(step, kept);
        }
      }
      if (row.has_eval || row.has_defect) {
        writer.write(row);
        rows.push_back(row);
      }
      if (step % cfg.snapshot_interval == 0) {
        weights.record(theta.data(), step);
        grads.record(gsum.data(), step);
        make_ckpt(step);
      }
    }

    const bool grok_stop =
        cfg.early_stop && confirm >= 0 && step >= confirm + cfg.early_stop_margin;
    if (step >= cfg.max_steps || grok_stop) {
      if (grok_stop && step < cfg.max_steps) add_flag("early_stop");
      break;
    }
    if (halt_after >= 0 && step >= halt_after) {
      halted = true;
      make_ckpt(step);
      break;
    }

    if (kick_pending && !kick_done && step == kick_trigger) {
      kick_done = true;
      if (apply_kick(theta.data(), n, kick_deltas, cfg.strength))
        add_flag("kick_applied");
      else
        add_flag("kick_skipped_zero_delta");
    }

    std::vector<int64_t> idx = stream.next_indices();
    Batch batch = task->make_train_batch(idx);
    try {
      const double loss = task->loss_and_grad(theta.data(), batch, grad.data());
      if (!std::isfinite(loss))
        throw std::runtime_error("non-finite loss");
      for (int64_t i = 0; i < n; ++i) gsum[size_t(i)] += grad[size_t(i)];
      if (use_project) apply_project(grad.data(), n, bases);
      if (use_penalty) apply_penalty(grad.data(), n, bases, cfg.strength);
      clip_global(grad.data(), n, cfg.clip_norm);
      opt.step(theta.data(), grad.data(), ps);
    } catch (const std::exception& e) {
      add_flag(std::string("aborted_at_") + std::to_string(step) + ":" +
               e.what());
      aborted = true;
      break;
    }
    if (use_noise) {
      noise.apply(theta.data(), grad.data(), n, cfg.lr, opt.t);
      if (noise.flagged_zero_grad) add_flag("noise_zero_grad");
    }
  }

  if (kick_pending && !kick_done) add_flag("kick_not_reached");

  if (!aborted && !halted) {
    if (last_eval != step) {
      MetricRow row;
      row.step = step;
      EvalResult tr = task->eval_train(theta.data());
      EvalResult te = task->eval_test(theta.data());
      row.has_eval = true;
      row.train_loss = tr.loss;
      row.train_acc = tr.accuracy;
      row.test_acc = te.accuracy;
      feed_eval(step, te.accuracy);
      writer.write(row);
      rows.push_back(row);
    }
    if (weights.steps().empty() || weights.steps().back() != step) {
      weights.record(theta.data(), step);
      grads.record(gsum.data(), step);
    }
    make_ckpt(step);
  }
  writer.close();

  std::vector<SeriesPoint> acc, med;
  for (const MetricRow& r : rows) {
    if (r.has_eval) acc.push_back({r.step, r.test_acc});
    if (r.has_defect) med.push_back({r.step, r.defect_median});
  }
  RunSummary s;
  s.run_id = cfg.run_id;
  s.config_hash = hash;
  s.seed = cfg.seed;
  s.grok_step = detect_grok(acc, dcfg);
  try {
    s.onset_step = detect_onset(med, dcfg, cfg.run_id);
  } catch (const std::exception&) {
    s.onset_step = -1;
    add_flag("onset_undetermined");
  }
  LeadTime lt = lead_time(s.grok_step, s.onset_step);
  s.lead_delta = lt.valid ? lt.delta_t : 0;
  s.lead_fraction = lt.valid ? lt.fraction : 0;
  s.last_step = step;
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->has_eval) {
      s.final_train_acc = it->train_acc;
      s.final_test_acc = it->test_acc;
      break;
    }
  }
  if (halted) add_flag("halted");
  s.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  s.rng_note = "splitmix64 named streams: init, data_order, probe_pairs, "
               "intervention, nulls";
  s.flags = flags;
  if (!halted) write_summary_json(paths.summary_json, s);

  RunResult out;
  out.summary = std::move(s);
  out.rows = std::move(rows);
  return out;
}

// ------------------------------------------------------------------ sweep

SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& lrs,
                  const std::vector<uint64_t>& seeds) {
  if (lrs.empty() || seeds.empty())
    throw std::runtime_error("sweep: empty lr grid or seed list");
  std::vector<RunRow> rows;
  for (double lr : lrs) {
    for (uint64_t seed : seeds) {
      ExperimentConfig c = base;
      c.lr = lr;
      c.seed = seed;
      c.run_id.clear();
      RunRow r;
      r.lr = lr;
      r.seed = seed;
      try {
        RunResult res = train_run(c);
        r.grok_step = res.summary.grok_step;
        r.onset_step = res.summary.onset_step;
        if (r.grok_step >= 0 && r.onset_step >= 0) {
          r.delta_t = double(r.grok_step - r.onset_step);
          if (r.grok_step > 0)
            r.lead_fraction = r.delta_t / double(r.grok_step);
        }
        r.flags = join_flags(res.summary.flags);
      } catch (const std::exception& e) {
        r.flags = std::string("error:") + e.what();
      }
      rows.push_back(r);
    }
  }
  return fits_from_rows(std::move(rows));
}

SweepResult fits_from_rows(std::vector<RunRow> rows) {
  SweepResult out;
  std::vector<ScalingPoint> pts;
  for (const RunRow& r : rows) {
    if (r.grok_step >= 0 && r.onset_step >= 0) {
      pts.push_back(
          {double(r.grok_step), double(r.grok_step - r.onset_step)});
    }
  }
  out.per_run = fit_power_law(pts);
  out.lr_means = lr_mean_fit(rows, FitMethod::ols_loglog, &out.dropped_groups);
  out.rows = std::move(rows);
  return out;
}

std::vector<RunRow> parse_run_rows(const std::string& csv_text) {
  std::vector<RunRow> rows;
  size_t start = 0;
  int line_no = 0;
  while (start < csv_text.size()) {
    size_t end = csv_text.find('\n', start);
    if (end == std::string::npos) end = csv_text.size();
    std::string line = csv_text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("lr,", 0) == 0) continue;  // header
    std::vector<std::string> fields;
    size_t f = 0;
    while (true) {
      size_t c = line.find(',', f);
      if (c == std::string::npos) {
        fields.push_back(line.substr(f));
        break;
      }
      fields.push_back(line.substr(f, c - f));
      f = c + 1;
    }
    if (fields.size() < 4)
      throw std::runtime_error("run table line " + std::to_string(line_no) +
                               ": expected at least 4 fields");
    RunRow r;
    try {
      r.lr = std::stod(fields[0]);
      r.seed = std::stoull(fields[1]);
      r.grok_step = fields[2].empty() ? -1 : std::stoll(fields[2]);
      r.onset_step = fields[3].empty() ? -1 : std::stoll(fields[3]);
    } catch (const std::exception&) {
      throw std::runtime_error("run table line " + std::to_string(line_no) +
                               ": bad number");
    }
    if (r.grok_step >= 0 && r.onset_step >= 0) {
      r.delta_t = double(r.grok_step - r.onset_step);
      if (r.grok_step > 0) r.lead_fraction = r.delta_t / double(r.grok_step);
    }
    if (fields.size() >= 7) r.flags = fields[6];
    rows.push_back(r);
  }
  return rows;
}

std::vector<RunRow> read_run_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("run table: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_rows(text);
}

namespace {

nlohmann::json fit_to_json(const ScalingFit& f) {
  nlohmann::json j;
  j["valid"] = f.valid;
  j["c"] = f.c;
  j["alpha"] = f.alpha;
  j["r2"] = f.r2;
  j["se_alpha"] = f.se_alpha;
  j["n"] = f.n;
  j["n_excluded"] = f.n_excluded;
  j["domain"] = f.domain == FitDomain::per_run ? "per_run" : "lr_means";
  return j;
}

}  // namespace

std::string fit_json(const SweepResult& s) {
  nlohmann::json j;
  j["per_run"] = fit_to_json(s.per_run);
  j["lr_means"] = fit_to_json(s.lr_means);
  j["dropped_lr_groups"] = s.dropped_groups;
  return j.dump(2) + "\n";
}

void write_scaling_plotdata(const std::vector<RunRow>& rows,
                            const ScalingFit& fit,
                            const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream sc(out_dir + "/scaling_scatter.csv", std::ios::trunc);
  sc << "t_grok,delta_t,lr,seed\n";
  double tmin = 0, tmax = 0;
  bool any = false;
  for (const RunRow& r : rows) {
    if (r.grok_step < 0 || r.onset_step < 0) continue;
    const double t = double(r.grok_step), d = double(r.grok_step - r.onset_step);
    sc << fmt_g(t) << ',' << fmt_g(d) << ',' << fmt_g(r.lr) << ',' << r.seed
       << '\n';
    if (t > 0) {
      tmin = any ? std::min(tmin, t) : t;
      tmax = any ? std::max(tmax, t) : t;
      any = true;
    }
  }
  sc.close();
  std::ofstream fl(out_dir + "/scaling_fit_line.csv", std::ios::trunc);
  fl << "t_grok,delta_t_fit\n";
  if (fit.valid && any && tmax > tmin) {
    const int n_pts = 50;
    for (int i = 0; i < n_pts; ++i) {
      const double lt = std::log(tmin) +
                        (std::log(tmax) - std::log(tmin)) * i / (n_pts - 1);
      const double t = std::exp(lt);
      fl << fmt_g(t) << ',' << fmt_g(fit.c * std::pow(t, fit.alpha)) << '\n';
    }
  }
}

std::vector<DoseCell> dose_sweep(
    const ExperimentConfig& base,
    const std::vector<std::pair<std::string, double>>& grid,
    const std::vector<uint64_t>& seeds) {
  std::vector<InterventionSpec> specs;
  for (const auto& [name, strength] : grid) {
    InterventionSpec sp;
    sp.condition = condition_from_name(name);
    sp.strength = strength;
    sp.trigger_step = base.trigger_step;
    sp.period = base.period;
    sp.basis_run = base.basis_run;
    sp.basis_k = base.basis_k;
    specs.push_back(sp);
  }
  DoseRunFn run = [&base](const InterventionSpec& sp, uint64_t seed) {
    ExperimentConfig c = base;
    c.condition = condition_name(sp.condition);
    c.strength = sp.strength;
    c.trigger_step = sp.trigger_step;
    c.period = sp.period;
    c.basis_run = sp.basis_run;
    c.basis_k = sp.basis_k;
    c.seed = seed;
    c.run_id.clear();
    RunResult res = train_run(c);
    DoseCell cell;
    cell.grok_step = res.summary.grok_step;
    cell.onset_step = res.summary.onset_step;
    cell.flags = join_flags(res.summary.flags);
    return cell;
  };
  return dose_response(specs, seeds, run);
}

// --------------------------------------------------------------- analysis

AnalysisResult analyze_run(const std::string& run_root, int k_basis,
                           int n_null, uint64_t seed) {
  AnalysisResult a;
  if (!fs::exists(run_root + "/summary.json"))
    throw std::runtime_error("analyze: no summary.json under " + run_root +
                             " (run unfinished?)");
  a.summary = read_summary_json(run_root + "/summary.json");
  std::vector<MetricRow> rows = read_metric_stream(run_root + "/metrics.jsonl");
  SnapshotArchive weights = SnapshotArchive::open(run_root + "/snapshots");
  if (weights.steps().size() < 2)
    throw std::runtime_error("analyze: need at least 2 snapshots under " +
                             run_root);

  Rng null_rng = named_stream(seed, "nulls");
  for (const MatrixSpec& ms : weights.matrices()) {
    MatrixReport r;
    r.name = ms.name;
    std::vector<PcaResult> series = expanding_pc1(weights, ms.name, k_basis);
    for (auto it = series.rbegin(); it != series.rend(); ++it) {
      if (it->valid) {
        r.valid = true;
        r.pc1_pct = it->pc1_pct;
        break;
      }
    }
    r.turnover_step = pc1_turnover(series);
    NullModelResult nm = random_walk_null(weights, ms.name, n_null, null_rng);
    r.null_z = nm.z;
    r.null_mean = nm.null_mean;
    r.null_std = nm.null_std;
    a.matrices.push_back(std::move(r));
  }
  a.split = spectral_split(weights);

  std::vector<AccPoint> evals;
  for (const MetricRow& r : rows)
    if (r.has_eval) evals.push_back({r.step, r.train_acc, r.test_acc});
  a.phases = assign_phases(evals, a.summary.onset_step, a.summary.grok_step,
                           a.summary.last_step);

  if (fs::is_directory(run_root + "/deltas") &&
      fs::is_directory(run_root + "/grad_accum")) {
    DeltaStore ds = DeltaStore::open(run_root + "/deltas");
    if (!ds.steps().empty()) {
      std::vector<DeltaSample> samples = ds.read_all();
      SnapshotArchive grads = SnapshotArchive::open(run_root + "/grad_accum");
      ArchiveBasisProvider provider(&weights, &grads);
      Rng ratio_rng = named_stream(seed, "ratio_bases");
      a.ratios =
          phase_ratios(a.phases, samples, provider, k_basis, 5, ratio_rng);
      a.has_ratios = true;
    }
  }
  return a;
}

void write_analysis(const AnalysisResult& a, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream o(out_dir + "/matrices.csv", std::ios::trunc);
    o << "matrix,pc1_pct,turnover_step,null_z,null_mean,null_std\n";
    for (const MatrixReport& r : a.matrices) {
      o << r.name << ',';
      if (r.valid) o << fmt_g(r.pc1_pct);
      o << ',';
      if (r.turnover_step >= 0) o << r.turnover_step;
      o << ',' << fmt_g(r.null_z) << ',' << fmt_g(r.null_mean) << ','
        << fmt_g(r.null_std) << '\n';
    }
  }
  {
    std::ofstream o(out_dir + "/split.csv", std::ios::trunc);
    o << "attention_mean,mlp_mean,n_attention,n_mlp\n";
    o << fmt_g(a.split.attention_mean) << ',' << fmt_g(a.split.mlp_mean) << ','
      << a.split.n_attention << ',' << a.split.n_mlp << '\n';
  }
  {
    std::ofstream o(out_dir + "/phases.csv", std::ios::trunc);
    o << "phase,begin,end\n";
    for (const PhaseRange& pr : a.phases.ranges) {
      if (!pr.present) continue;
      o << phase_name(pr.phase) << ',' << pr.begin << ',' << pr.end << '\n';
    }
  }
  {
    std::ofstream o(out_dir + "/phase_ratios.csv", std::ios::trunc);
    if (a.has_ratios) {
      o << phase_ratio_csv(a.ratios, a.phases);
    } else {
      o << "phase,weight_svd,delta_w_svd,grad_svd\n";
    }
  }
}

// ----------------------------------------------------------------- export

void export_plotdata(const std::string& run_root, const std::string& out_dir) {
  ExperimentConfig cfg = parse_config_file(run_root + "/config.txt");
  std::vector<MetricRow> rows = read_metric_stream(run_root + "/metrics.jsonl");
  fs::create_directories(out_dir);

  {
    std::ofstream o(out_dir + "/overlay.csv", std::ios::trunc);
    o << "step,train_acc,test_acc,defect_median,defect_q25,defect_q75\n";
    for (const MetricRow& r : rows) {
      o << r.step << ',';
      if (r.has_eval) o << fmt_g(r.train_acc) << ',' << fmt_g(r.test_acc);
      else o << ',';
      o << ',';
      if (r.has_defect)
        o << fmt_g(r.defect_median) << ',' << fmt_g(r.defect_q25) << ','
          << fmt_g(r.defect_q75);
      else
        o << ",,";
      o << '\n';
    }
  }

  std::vector<int64_t> esteps;
  std::vector<double> eacc;
  for (const MetricRow& r : rows) {
    if (r.has_eval) {
      esteps.push_back(r.step);
      eacc.push_back(r.test_acc);
    }
  }
  const int64_t ei = cfg.eval_interval > 0 ? cfg.eval_interval : 100;
  const int w200 = int(std::max<int64_t>(1, 200 / ei));
  const int w500 = int(std::max<int64_t>(1, 500 / ei));
  std::vector<double> s200 = moving_average(eacc, w200);
  std::vector<double> s500 = moving_average(eacc, w500);
  {
    std::ofstream o(out_dir + "/instability.csv", std::ios::trunc);
    o << "step,test_acc,smooth_200,smooth_500\n";
    for (size_t i = 0; i < esteps.size(); ++i) {
      o << esteps[i] << ',' << fmt_g(eacc[i]) << ',' << fmt_g(s200[i]) << ','
        << fmt_g(s500[i]) << '\n';
    }
  }
  {
    std::ofstream o(out_dir + "/crossings.csv", std::ios::trunc);
    o << "series,threshold,crossings\n";
    o << "raw," << fmt_g(cfg.acc_threshold) << ','
      << count_threshold_crossings(eacc, cfg.acc_threshold) << '\n';
    o << "smooth_200," << fmt_g(cfg.acc_threshold) << ','
      << count_threshold_crossings(s200, cfg.acc_threshold) << '\n';
    o << "smooth_500," << fmt_g(cfg.acc_threshold) << ','
      << count_threshold_crossings(s500, cfg.acc_threshold) << '\n';
  }

  if (fs::is_directory(run_root + "/snapshots")) {
    SnapshotArchive weights = SnapshotArchive::open(run_root + "/snapshots");
    if (weights.steps().size() >= 2) {
      std::ofstream o(out_dir + "/pc1_expanding.csv", std::ios::trunc);
      o << "matrix,window_end_step,pc1_pct\n";
      for (const MatrixSpec& ms : weights.matrices()) {
        std::vector<PcaResult> series = expanding_pc1(weights, ms.name, 0);
        for (const PcaResult& p : series) {
          if (!p.valid) continue;
          o << ms.name << ',' << p.step << ',' << fmt_g(p.pc1_pct) << '\n';
        }
      }
    }
  }
}

}  // namespace gk
