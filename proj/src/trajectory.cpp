#include "trajectory.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace gk {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Displacement rows vec(W_tau - W_0), uncentered, for recorded steps
// <= through_step (all steps when through_step < 0).
RowMat displacement_rows(const SnapshotArchive& a, const std::string& name,
                         int64_t through_step, std::vector<int64_t>* used) {
  const MatrixSpec& m = a.spec(name);
  const int64_t dim = int64_t(m.rows) * m.cols;
  std::vector<int64_t> steps;
  for (int64_t s : a.steps()) {
    if (through_step < 0 || s <= through_step) steps.push_back(s);
  }
  if (steps.size() < 2) {
    throw std::runtime_error("trajectory: need at least 2 snapshots of " +
                             name + ", have " + std::to_string(steps.size()));
  }
  RowMat d(steps.size(), dim);
  std::vector<float> w0 = a.read_matrix(steps[0], name);
  for (size_t r = 0; r < steps.size(); ++r) {
    std::vector<float> wt = a.read_matrix(steps[r], name);
    for (int64_t i = 0; i < dim; ++i) {
      d(Eigen::Index(r), i) = double(wt[size_t(i)]) - double(w0[size_t(i)]);
    }
  }
  if (used) *used = std::move(steps);
  return d;
}

// Eigen-decomposition of a column-centered Gram matrix; ratios descending.
void gram_eig(const MatrixXd& centered, std::vector<double>* ratios,
              MatrixXd* vecs, VectorXd* vals) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(centered);
  const Eigen::Index n = centered.rows();
  VectorXd lam = es.eigenvalues();  // ascending
  for (Eigen::Index i = 0; i < n; ++i) lam[i] = std::max(lam[i], 0.0);
  double total = lam.sum();
  ratios->clear();
  if (total > 0) {
    for (Eigen::Index i = n - 1; i >= 0; --i) ratios->push_back(lam[i] / total);
  }
  if (vecs) *vecs = es.eigenvectors();
  if (vals) *vals = lam;
}

MatrixXd center_gram(const MatrixXd& g) {
  const Eigen::Index n = g.rows();
  VectorXd rm = g.rowwise().mean();
  const double all = rm.mean();
  MatrixXd c = g;
  c.colwise() -= rm;
  c.rowwise() -= rm.transpose();
  c.array() += all;
  return c;
}

PcaResult pca_from_gram(const MatrixXd& gram, int64_t step) {
  PcaResult r;
  r.step = step;
  std::vector<double> ratios;
  gram_eig(center_gram(gram), &ratios, nullptr, nullptr);
  if (ratios.empty()) return r;  // zero window: missing
  r.valid = true;
  r.ratios = std::move(ratios);
  r.pc1_pct = 100.0 * r.ratios[0];
  return r;
}

void attach_basis(PcaResult* r, const RowMat& rows, int k_basis) {
  if (!r->valid || k_basis <= 0) return;
  RowMat c = rows;
  VectorXd mu = rows.colwise().mean();
  c.rowwise() -= mu.transpose();
  std::vector<double> ratios;
  MatrixXd vecs;
  VectorXd vals;
  gram_eig(c * c.transpose(), &ratios, &vecs, &vals);
  const Eigen::Index n = c.rows();
  const int k = std::min({int64_t(k_basis), int64_t(n), int64_t(c.cols())});
  for (int j = 0; j < k; ++j) {
    const Eigen::Index col = n - 1 - j;  // descending eigenvalue order
    if (vals[col] <= 0) break;
    VectorXd v = c.transpose() * vecs.col(col) / std::sqrt(vals[col]);
    const double nrm = v.norm();
    if (nrm == 0) break;
    v /= nrm;
    r->basis.emplace_back(v.data(), v.data() + v.size());
  }
}

double full_window_pc1(const RowMat& rows) {
  MatrixXd gram = rows * rows.transpose();
  PcaResult r = pca_from_gram(gram, 0);
  if (!r.valid) {
    throw std::runtime_error("trajectory: degenerate (all-zero) trajectory");
  }
  return r.pc1_pct;
}

}  // namespace

std::vector<double> trajectory_matrix(const SnapshotArchive& a,
                                      const std::string& name,
                                      int64_t through_step, int64_t* n_rows,
                                      int64_t* dim) {
  RowMat d = displacement_rows(a, name, through_step, nullptr);
  VectorXd mu = d.colwise().mean();
  d.rowwise() -= mu.transpose();
  if (n_rows) *n_rows = d.rows();
  if (dim) *dim = d.cols();
  return std::vector<double>(d.data(), d.data() + d.size());
}

PcaResult pca_of_rows(const std::vector<double>& rows, int64_t n, int64_t dim,
                      int k_basis) {
  if (n < 2 || int64_t(rows.size()) != n * dim) {
    throw std::runtime_error("pca_of_rows: bad dimensions");
  }
  Eigen::Map<const RowMat> d(rows.data(), n, dim);
  RowMat dm = d;
  PcaResult r = pca_from_gram(dm * dm.transpose(), 0);
  attach_basis(&r, dm, k_basis);
  return r;
}

std::vector<PcaResult> expanding_pc1(const SnapshotArchive& a,
                                     const std::string& name, int k_basis) {
  std::vector<int64_t> steps;
  RowMat d = displacement_rows(a, name, -1, &steps);
  if (steps.size() < 3) {
    throw std::runtime_error("expanding_pc1: need at least 3 snapshots of " +
                             name);
  }
  MatrixXd gram = d * d.transpose();
  std::vector<PcaResult> out;
  const Eigen::Index n = d.rows();
  for (Eigen::Index m = 2; m <= n; ++m) {
    PcaResult r =
        pca_from_gram(gram.topLeftCorner(m, m), steps[size_t(m) - 1]);
    if (m == n) attach_basis(&r, d, k_basis);
    out.push_back(std::move(r));
  }
  return out;
}

int64_t pc1_turnover(const std::vector<PcaResult>& series) {
  std::vector<std::pair<int64_t, double>> v;  // (step, pc1)
  for (const PcaResult& r : series) {
    if (r.valid) v.emplace_back(r.step, r.pc1_pct);
  }
  const size_t n = v.size();
  double prefix_max = -1;
  for (size_t p = 0; p < n; ++p) {
    if (v[p].second < prefix_max) continue;  // not a prefix maximum
    prefix_max = v[p].second;
    double later_max = -1;
    bool dropped = false;
    for (size_t j = p + 1; j < n; ++j) {
      later_max = std::max(later_max, v[j].second);
      if (v[j].second < v[p].second - 2.0) dropped = true;
    }
    if (dropped && later_max <= v[p].second) return v[p].first;
  }
  return -1;
}

PcaResult pca_basis(const SnapshotArchive& a, const std::string& name,
                    int64_t through_step, int k_basis) {
  std::vector<int64_t> steps;
  RowMat d = displacement_rows(a, name, through_step, &steps);
  PcaResult r = pca_from_gram(d * d.transpose(), steps.back());
  attach_basis(&r, d, k_basis);
  return r;
}

NullModelResult random_walk_null(const SnapshotArchive& a,
                                 const std::string& name, int n_null,
                                 Rng& rng) {
  if (n_null < 2) throw std::runtime_error("random_walk_null: n_null < 2");
  RowMat d = displacement_rows(a, name, -1, nullptr);
  const Eigen::Index n = d.rows(), dim = d.cols();
  NullModelResult res;
  res.n_null = n_null;
  res.observed = full_window_pc1(d);

  std::vector<double> norms;  // per-step displacement norms
  for (Eigen::Index r = 1; r < n; ++r) {
    norms.push_back((d.row(r) - d.row(r - 1)).norm());
  }
  std::vector<double> pc1s;
  RowMat walk(n, dim);
  VectorXd u(dim);
  for (int t = 0; t < n_null; ++t) {
    walk.row(0).setZero();
    for (Eigen::Index r = 1; r < n; ++r) {
      for (Eigen::Index i = 0; i < dim; ++i) u[i] = rng.next_normal();
      const double un = u.norm();
      walk.row(r) = walk.row(r - 1) + (norms[size_t(r) - 1] / un) *
                                          u.transpose();
    }
    pc1s.push_back(full_window_pc1(walk));
  }
  double mean = 0;
  for (double x : pc1s) mean += x;
  mean /= double(n_null);
  double var = 0;
  for (double x : pc1s) var += (x - mean) * (x - mean);
  var /= double(n_null - 1);
  res.null_mean = mean;
  res.null_std = std::sqrt(var);
  res.z = (res.observed - mean) / res.null_std;
  return res;
}

SpectralSplit spectral_split(const SnapshotArchive& a) {
  SpectralSplit s;
  for (const MatrixSpec& m : a.matrices()) {
    RowMat d = displacement_rows(a, m.name, -1, nullptr);
    const double pc1 = full_window_pc1(d);
    if (m.name.find("mlp") != std::string::npos) {
      s.mlp_mean += pc1;
      ++s.n_mlp;
    } else {
      s.attention_mean += pc1;
      ++s.n_attention;
    }
  }
  if (s.n_attention) s.attention_mean /= s.n_attention;
  if (s.n_mlp) s.mlp_mean /= s.n_mlp;
  return s;
}

}  // namespace gk
