#include "integrability.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

namespace gk {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::early: return "early";
    case Phase::memorization: return "memorization";
    case Phase::pre_grok: return "pre_grok";
    case Phase::post_grok: return "post_grok";
  }
  throw std::runtime_error("phase_name: bad phase");
}

const char* basis_kind_name(BasisKind k) {
  switch (k) {
    case BasisKind::weight_svd: return "weight_svd";
    case BasisKind::delta_w_svd: return "delta_w_svd";
    case BasisKind::grad_svd: return "grad_svd";
  }
  throw std::runtime_error("basis_kind_name: bad kind");
}

int PhaseSet::phase_of(int64_t step) const {
  for (int i = 0; i < kNumPhases; ++i) {
    const PhaseRange& r = ranges[static_cast<size_t>(i)];
    if (r.present && step >= r.begin && step < r.end) return i;
  }
  return -1;
}

PhaseSet assign_phases(const std::vector<AccPoint>& evals, int64_t onset_step,
                       int64_t grok_step, int64_t end_step) {
  PhaseSet out;
  for (int i = 0; i < kNumPhases; ++i)
    out.ranges[static_cast<size_t>(i)].phase = static_cast<Phase>(i);

  const int64_t open_end = end_step + 1;

  // Natural (unclipped) ranges.
  int64_t early_end = open_end;
  for (const AccPoint& e : evals) {
    if (e.train_acc > 0.5) {
      early_end = e.step;
      break;
    }
  }
  int64_t mem_begin = -1, mem_end = -1;
  for (const AccPoint& e : evals) {
    if (e.train_acc >= 0.99 && e.test_acc < 0.5) {
      if (mem_begin < 0) mem_begin = e.step;
      mem_end = e.step + 1;
    }
  }

  struct Nat {
    bool present;
    int64_t begin, end;
  };
  std::array<Nat, kNumPhases> nat;
  nat[0] = {true, 0, early_end};
  nat[1] = {mem_begin >= 0, mem_begin, mem_end};
  nat[2] = {onset_step >= 0, onset_step,
            grok_step >= 0 ? grok_step : open_end};
  nat[3] = {grok_step >= 0, grok_step, open_end};

  // Later phase takes precedence: clip each present phase at the first later
  // present phase's begin.
  for (int i = 0; i < kNumPhases; ++i) {
    if (!nat[static_cast<size_t>(i)].present) continue;
    int64_t end = std::min(nat[static_cast<size_t>(i)].end, open_end);
    for (int j = i + 1; j < kNumPhases; ++j)
      if (nat[static_cast<size_t>(j)].present)
        end = std::min(end, nat[static_cast<size_t>(j)].begin);
    PhaseRange& r = out.ranges[static_cast<size_t>(i)];
    r.begin = nat[static_cast<size_t>(i)].begin;
    r.end = end;
    r.present = end > r.begin;
  }
  return out;
}

MatrixBasis build_basis(BasisKind kind, const BasisSource& src, int k) {
  if (k < 1) throw std::runtime_error("build_basis: k must be >= 1");
  if (src.rows <= 0 || src.cols <= 0)
    throw std::runtime_error("build_basis: empty source shape");

  const float* raw = nullptr;
  switch (kind) {
    case BasisKind::weight_svd: raw = src.w_t; break;
    case BasisKind::delta_w_svd: raw = src.w_t; break;
    case BasisKind::grad_svd: raw = src.g_acc; break;
  }
  if (raw == nullptr || (kind == BasisKind::delta_w_svd && src.w_0 == nullptr))
    throw std::runtime_error("build_basis: missing source matrix");

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat m(src.rows, src.cols);
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) {
      const size_t i = size_t(r) * size_t(src.cols) + size_t(c);
      double v = double(raw[i]);
      if (kind == BasisKind::delta_w_svd) v -= double(src.w_0[i]);
      m(r, c) = v;
    }

  Eigen::JacobiSVD<RowMat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const int max_rank = std::min({k, src.rows, src.cols});
  const double tol = sv.size() > 0 ? 1e-7 * sv(0) : 0.0;

  MatrixBasis out;
  out.basis.p = int64_t(src.rows) * int64_t(src.cols);
  int rank = 0;
  while (rank < max_rank && sv(rank) > tol && sv(rank) > 0.0) ++rank;
  out.rank = rank;
  out.truncated = rank < k;
  out.basis.k = rank;
  out.basis.cols.assign(static_cast<size_t>(out.basis.p) * size_t(rank), 0.0);
  for (int j = 0; j < rank; ++j) {
    double* col = out.basis.cols.data() + size_t(j) * size_t(out.basis.p);
    for (int r = 0; r < src.rows; ++r)
      for (int c = 0; c < src.cols; ++c)
        col[size_t(r) * size_t(src.cols) + size_t(c)] =
            svd.matrixU()(r, j) * svd.matrixV()(c, j);
  }
  return out;
}

ArchiveBasisProvider::ArchiveBasisProvider(const SnapshotArchive* weights,
                                           const SnapshotArchive* grads)
    : weights_(weights), grads_(grads) {
  if (weights_ == nullptr)
    throw std::runtime_error("archive basis provider: null weight archive");
}

const std::vector<MatrixSpec>& ArchiveBasisProvider::matrices() const {
  return weights_->matrices();
}

int64_t ArchiveBasisProvider::resolve_step(int64_t step) const {
  const std::vector<int64_t>& st = weights_->steps();
  auto it = std::upper_bound(st.begin(), st.end(), step);
  if (it == st.begin()) return -1;
  return *std::prev(it);
}

bool ArchiveBasisProvider::source_at(int64_t snap, const std::string& name,
                                     std::vector<float>& w_t,
                                     std::vector<float>& w_0,
                                     std::vector<float>& g_acc, int& rows,
                                     int& cols) const {
  if (!weights_->has_matrix(name)) return false;
  const std::vector<int64_t>& st = weights_->steps();
  if (!std::binary_search(st.begin(), st.end(), snap)) return false;
  const MatrixSpec& ms = weights_->spec(name);
  rows = ms.rows;
  cols = ms.cols;
  w_t = weights_->read_matrix(snap, name);
  w_0 = weights_->read_matrix(st.front(), name);
  g_acc.clear();
  if (grads_ != nullptr && grads_->has_matrix(name)) {
    const std::vector<int64_t>& gs = grads_->steps();
    if (std::binary_search(gs.begin(), gs.end(), snap))
      g_acc = grads_->read_matrix(snap, name);
  }
  return true;
}

PhaseRatioTable phase_ratios(const PhaseSet& phases,
                             const std::vector<DeltaSample>& samples,
                             const BasisProvider& provider, int k, int n_rand,
                             Rng& rng) {
  if (k < 1) throw std::runtime_error("phase_ratios: k must be >= 1");
  if (n_rand < 1) throw std::runtime_error("phase_ratios: n_rand must be >= 1");

  PhaseRatioTable table;
  std::array<std::array<double, kNumBasisKinds>, kNumPhases> sum{};
  std::array<std::array<int, kNumBasisKinds>, kNumPhases> cnt{};

  // Bucket samples by phase, then by resolved snapshot step so each basis is
  // built once per (snapshot, matrix, kind).
  std::array<std::map<int64_t, std::vector<const DeltaSample*>>, kNumPhases>
      buckets;
  for (const DeltaSample& s : samples) {
    int ph = phases.phase_of(s.step);
    if (ph < 0) continue;
    int64_t snap = provider.resolve_step(s.step);
    if (snap < 0) continue;
    buckets[static_cast<size_t>(ph)][snap].push_back(&s);
  }

  const std::vector<MatrixSpec>& mats = provider.matrices();
  std::vector<float> w_t, w_0, g_acc;
  std::vector<double> blk;
  for (int ph = 0; ph < kNumPhases; ++ph) {
    for (const auto& [snap, group] : buckets[static_cast<size_t>(ph)]) {
      for (const MatrixSpec& ms : mats) {
        int rows = 0, cols = 0;
        if (!provider.source_at(snap, ms.name, w_t, w_0, g_acc, rows, cols))
          continue;
        const size_t n_blk = size_t(rows) * size_t(cols);
        for (int kd = 0; kd < kNumBasisKinds; ++kd) {
          BasisSource src;
          src.rows = rows;
          src.cols = cols;
          src.w_t = w_t.data();
          src.w_0 = w_0.empty() ? nullptr : w_0.data();
          src.g_acc = g_acc.empty() ? nullptr : g_acc.data();
          const BasisKind kind = static_cast<BasisKind>(kd);
          if (kind == BasisKind::delta_w_svd && src.w_0 == nullptr) continue;
          if (kind == BasisKind::grad_svd && src.g_acc == nullptr) continue;
          MatrixBasis mb = build_basis(kind, src, k);
          if (mb.rank == 0) continue;
          for (const DeltaSample* s : group) {
            if (size_t(ms.off) + n_blk > s->delta.size())
              throw std::runtime_error(
                  "phase_ratios: delta sample shorter than matrix block");
            blk.resize(n_blk);
            for (size_t i = 0; i < n_blk; ++i)
              blk[i] = double(s->delta[size_t(ms.off) + i]);
            double ratio = exec_random_ratio(blk.data(), mb.basis, n_rand, rng);
            if (!std::isfinite(ratio)) continue;
            sum[static_cast<size_t>(ph)][static_cast<size_t>(kd)] += ratio;
            cnt[static_cast<size_t>(ph)][static_cast<size_t>(kd)] += 1;
          }
        }
      }
    }
  }

  for (int ph = 0; ph < kNumPhases; ++ph)
    for (int kd = 0; kd < kNumBasisKinds; ++kd) {
      PhaseBasisCell& c =
          table.cells[static_cast<size_t>(ph)][static_cast<size_t>(kd)];
      c.n = cnt[static_cast<size_t>(ph)][static_cast<size_t>(kd)];
      c.present = c.n > 0;
      if (c.present)
        c.ratio =
            sum[static_cast<size_t>(ph)][static_cast<size_t>(kd)] / c.n;
    }
  return table;
}

std::string phase_ratio_csv(const PhaseRatioTable& table,
                            const PhaseSet& phases) {
  std::string out = "phase,weight_svd,delta_w_svd,grad_svd\n";
  char buf[64];
  for (int ph = 0; ph < kNumPhases; ++ph) {
    const PhaseRange& r = phases.ranges[static_cast<size_t>(ph)];
    if (!r.present) continue;
    out += phase_name(static_cast<Phase>(ph));
    for (int kd = 0; kd < kNumBasisKinds; ++kd) {
      const PhaseBasisCell& c =
          table.cells[static_cast<size_t>(ph)][static_cast<size_t>(kd)];
      out += ',';
      if (c.present) {
        std::snprintf(buf, sizeof buf, "%.6g", c.ratio);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace gk
