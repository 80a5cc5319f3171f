#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "archive.hpp"
#include "rng.hpp"

namespace gk {

// Execution-manifold analysis over a snapshot archive: trajectory matrices of
// displacements vec(W_tau - W_0) (zero row included), column-centered PCA via
// the snapshot-space Gram matrix, expanding-window PC1 series with turnover,
// random-walk null z-scores, and the attention-vs-MLP spectral split.

struct PcaResult {
  bool valid = false;
  int64_t step = 0;            // window end step
  std::vector<double> ratios;  // explained variance, descending, sums to ~1
  double pc1_pct = 0;          // 100 * ratios[0]
  // Top-K right singular vectors (row-major K x dim); filled only where
  // documented (final window of expanding_pc1, pca_basis).
  std::vector<std::vector<double>> basis;
};

struct NullModelResult {
  double observed = 0;  // full-window PC1% of the real trajectory
  double null_mean = 0;
  double null_std = 0;
  double z = 0;
  int n_null = 0;
};

struct SpectralSplit {
  double attention_mean = 0;
  double mlp_mean = 0;
  int n_attention = 0;
  int n_mlp = 0;
};

// Rows vec(W_tau - W_0) for all recorded tau <= through_step, column-centered.
// Row-major n_rows x dim. Throws on unknown matrix or fewer than 2 rows.
std::vector<double> trajectory_matrix(const SnapshotArchive& a,
                                      const std::string& name,
                                      int64_t through_step, int64_t* n_rows,
                                      int64_t* dim);

// PCA of an arbitrary row-major matrix of displacement rows (not yet
// centered); centering happens inside. Basis vectors attached when k_basis>0.
PcaResult pca_of_rows(const std::vector<double>& rows, int64_t n, int64_t dim,
                      int k_basis);

// One PcaResult per expanding window (first window = 2 snapshots); the final
// window carries the top-k basis. Degenerate (all-zero) windows are returned
// with valid=false.
std::vector<PcaResult> expanding_pc1(const SnapshotArchive& a,
                                     const std::string& name, int k_basis = 5);

// Turnover: step of the first prefix-maximum PC1% value that a later window
// undercuts by more than 2 percentage points and that no later window
// re-exceeds; -1 when the series never turns over.
int64_t pc1_turnover(const std::vector<PcaResult>& series);

// PCA basis of the full window through `through_step` (top-k right singular
// vectors). Used by interventions that project onto the baseline manifold.
PcaResult pca_basis(const SnapshotArchive& a, const std::string& name,
                    int64_t through_step, int k_basis);

// Null model: synthetic trajectories with the observed per-step displacement
// norms but uniformly random directions; z-score of the observed full-window
// PC1% against the null distribution.
NullModelResult random_walk_null(const SnapshotArchive& a,
                                 const std::string& name, int n_null,
                                 Rng& rng);

// Final-window PC1% averaged over matrix groups: names containing "mlp" form
// the MLP group, everything else the attention group.
SpectralSplit spectral_split(const SnapshotArchive& a);

}  // namespace gk
