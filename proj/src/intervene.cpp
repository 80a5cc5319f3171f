#include "intervene.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "trajectory.hpp"

namespace gk {

const char* condition_name(Condition c) {
  switch (c) {
    case Condition::baseline: return "baseline";
    case Condition::kick_1a: return "kick_1a";
    case Condition::noise_1a: return "noise_1a";
    case Condition::project_1b: return "project_1b";
    case Condition::penalty_1b: return "penalty_1b";
  }
  throw std::runtime_error("condition_name: bad condition");
}

Condition condition_from_name(const std::string& name) {
  for (Condition c : {Condition::baseline, Condition::kick_1a,
                      Condition::noise_1a, Condition::project_1b,
                      Condition::penalty_1b})
    if (name == condition_name(c)) return c;
  throw std::runtime_error("unknown intervention condition '" + name + "'");
}

bool apply_kick(float* theta, int64_t n,
                const std::vector<std::vector<float>>& deltas, double kappa) {
  const int m = int(deltas.size());
  if (m == 0) return false;
  for (const std::vector<float>& d : deltas)
    if (int64_t(d.size()) != n)
      throw std::runtime_error("apply_kick: delta length mismatch");

  // Top left-singular direction via the m x m Gram of the sample columns.
  Eigen::MatrixXd gram(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      double s = 0;
      for (int64_t t = 0; t < n; ++t)
        s += double(deltas[size_t(i)][size_t(t)]) *
             double(deltas[size_t(j)][size_t(t)]);
      gram(i, j) = s;
      gram(j, i) = s;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const int top = m - 1;  // eigenvalues ascending
  const double lam = eig.eigenvalues()(top);
  if (!(lam > 0)) return false;

  std::vector<double> u(static_cast<size_t>(n), 0.0);
  for (int j = 0; j < m; ++j) {
    const double w = eig.eigenvectors()(j, top);
    for (int64_t t = 0; t < n; ++t)
      u[size_t(t)] += w * double(deltas[size_t(j)][size_t(t)]);
  }
  double un = 0;
  for (double v : u) un += v * v;
  un = std::sqrt(un);
  if (!(un > 0)) return false;

  // Canonical sign: largest-magnitude coordinate positive.
  int64_t arg = 0;
  for (int64_t t = 1; t < n; ++t)
    if (std::fabs(u[size_t(t)]) > std::fabs(u[size_t(arg)])) arg = t;
  const double sign = u[size_t(arg)] >= 0 ? 1.0 : -1.0;

  double tn = 0;
  for (int64_t t = 0; t < n; ++t) tn += double(theta[size_t(t)]) * theta[size_t(t)];
  tn = std::sqrt(tn);
  const double scale = kappa * tn * sign / un;
  for (int64_t t = 0; t < n; ++t)
    theta[size_t(t)] += float(scale * u[size_t(t)]);
  return true;
}

void NoiseHook::apply(float* theta, const float* grad, int64_t n, double eta,
                      int64_t updates_done) {
  if (period < 1) throw std::runtime_error("noise hook: period must be >= 1");
  if (nu == 0.0) return;
  if (updates_done % period != 0) return;

  std::vector<double> noise(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) noise[size_t(i)] = rng.next_normal();

  double gn2 = 0, dot = 0;
  for (int64_t i = 0; i < n; ++i) {
    gn2 += double(grad[size_t(i)]) * grad[size_t(i)];
    dot += noise[size_t(i)] * grad[size_t(i)];
  }
  double target;
  if (gn2 > 0) {
    for (int64_t i = 0; i < n; ++i)
      noise[size_t(i)] -= dot / gn2 * double(grad[size_t(i)]);
    target = nu * eta * std::sqrt(gn2);
  } else {
    flagged_zero_grad = true;  // raw Gaussian; ||g|| treated as 1
    target = nu * eta;
  }
  double nn = 0;
  for (double v : noise) nn += v * v;
  nn = std::sqrt(nn);
  if (!(nn > 0)) return;
  for (int64_t i = 0; i < n; ++i)
    theta[size_t(i)] += float(target / nn * noise[size_t(i)]);
}

namespace {

void shrink_orthogonal(float* grad, int64_t n, const MatrixBases& mb,
                       double s) {
  if (mb.names.size() != mb.offsets.size() ||
      mb.names.size() != mb.bases.size())
    throw std::runtime_error("matrix bases: ragged table");
  std::vector<double> blk, par;
  for (size_t m = 0; m < mb.bases.size(); ++m) {
    const Basis& b = mb.bases[m];
    const int64_t off = mb.offsets[m];
    if (off < 0 || off + b.p > n)
      throw std::runtime_error("matrix bases: block '" + mb.names[m] +
                               "' outside the parameter vector");
    blk.assign(static_cast<size_t>(b.p), 0.0);
    for (int64_t i = 0; i < b.p; ++i)
      blk[size_t(i)] = double(grad[size_t(off + i)]);
    par.assign(static_cast<size_t>(b.p), 0.0);
    for (int k = 0; k < b.k; ++k) {
      const double* col = b.cols.data() + size_t(k) * size_t(b.p);
      double c = 0;
      for (int64_t i = 0; i < b.p; ++i) c += col[size_t(i)] * blk[size_t(i)];
      for (int64_t i = 0; i < b.p; ++i) par[size_t(i)] += c * col[size_t(i)];
    }
    for (int64_t i = 0; i < b.p; ++i) {
      const double perp = blk[size_t(i)] - par[size_t(i)];
      grad[size_t(off + i)] = float(par[size_t(i)] + (1.0 - s) * perp);
    }
  }
}

}  // namespace

void apply_project(float* grad, int64_t n, const MatrixBases& mb) {
  shrink_orthogonal(grad, n, mb, 1.0);
}

void apply_penalty(float* grad, int64_t n, const MatrixBases& mb, double s) {
  if (s < 0 || s > 1)
    throw std::runtime_error("apply_penalty: strength must lie in [0,1]");
  shrink_orthogonal(grad, n, mb, s);
}

MatrixBases attention_trajectory_bases(const SnapshotArchive& archive, int k) {
  if (archive.steps().size() < 2)
    throw std::runtime_error(
        "attention bases: archive has fewer than 2 snapshots");
  const int64_t last = archive.steps().back();
  MatrixBases mb;
  for (const MatrixSpec& ms : archive.matrices()) {
    const bool attention = ms.name.find(".attn.") != std::string::npos ||
                           ms.name.find(".self.") != std::string::npos ||
                           ms.name.find(".cross.") != std::string::npos;
    if (!attention) continue;
    PcaResult pca = pca_basis(archive, ms.name, last, k);
    if (!pca.valid || pca.basis.empty())
      throw std::runtime_error("attention bases: no valid basis for '" +
                               ms.name + "'");
    Basis b;
    b.p = int64_t(ms.rows) * int64_t(ms.cols);
    b.k = int(pca.basis.size());
    b.cols.resize(size_t(b.p) * size_t(b.k));
    for (int j = 0; j < b.k; ++j) {
      if (int64_t(pca.basis[size_t(j)].size()) != b.p)
        throw std::runtime_error("attention bases: dimension mismatch for '" +
                                 ms.name + "'");
      std::copy(pca.basis[size_t(j)].begin(), pca.basis[size_t(j)].end(),
                b.cols.begin() + size_t(j) * size_t(b.p));
    }
    mb.names.push_back(ms.name);
    mb.offsets.push_back(ms.off);
    mb.bases.push_back(std::move(b));
  }
  if (mb.names.empty())
    throw std::runtime_error("attention bases: no attention matrices in '" +
                             archive.dir() + "'");
  return mb;
}

std::vector<DoseCell> dose_response(const std::vector<InterventionSpec>& grid,
                                    const std::vector<uint64_t>& seeds,
                                    const DoseRunFn& run) {
  if (grid.empty()) throw std::runtime_error("dose_response: empty grid");
  std::vector<DoseCell> out;
  for (const InterventionSpec& spec : grid)
    for (uint64_t seed : seeds) {
      DoseCell cell;
      cell.condition = spec.condition;
      cell.strength = spec.strength;
      cell.seed = seed;
      try {
        cell = run(spec, seed);
        cell.condition = spec.condition;
        cell.strength = spec.strength;
        cell.seed = seed;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.flags = std::string("error:") + e.what();
      }
      out.push_back(std::move(cell));
    }
  return out;
}

std::string dose_csv(const std::vector<DoseCell>& cells) {
  std::string out = "condition,strength,seed,grok_step,onset_step,flags\n";
  char buf[128];
  for (const DoseCell& c : cells) {
    std::snprintf(buf, sizeof buf, "%s,%g,%llu,", condition_name(c.condition),
                  c.strength, (unsigned long long)c.seed);
    out += buf;
    if (c.grok_step >= 0) {
      std::snprintf(buf, sizeof buf, "%lld", (long long)c.grok_step);
      out += buf;
    }
    out += ',';
    if (c.onset_step >= 0) {
      std::snprintf(buf, sizeof buf, "%lld", (long long)c.onset_step);
      out += buf;
    }
    out += ',';
    out += c.flags;
    out += '\n';
  }
  return out;
}

}  // namespace gk
