#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "archive.hpp"
#include "probes.hpp"
#include "rng.hpp"

namespace gk {

// Three-basis integrability decomposition: commutator vectors from each
// training phase are projected onto SVD bases built from the weight
// trajectory (current weights, weight displacement, accumulated gradient)
// and compared against random bases of matching dimension.

enum class Phase { early = 0, memorization = 1, pre_grok = 2, post_grok = 3 };
enum class BasisKind { weight_svd = 0, delta_w_svd = 1, grad_svd = 2 };

inline constexpr int kNumPhases = 4;
inline constexpr int kNumBasisKinds = 3;

const char* phase_name(Phase p);
const char* basis_kind_name(BasisKind k);

struct AccPoint {
  int64_t step = 0;
  double train_acc = 0;
  double test_acc = 0;
};

// Half-open step range [begin, end); an empty or undefined phase has
// present = false.
struct PhaseRange {
  Phase phase = Phase::early;
  bool present = false;
  int64_t begin = 0;
  int64_t end = 0;
};

struct PhaseSet {
  std::array<PhaseRange, kNumPhases> ranges;

  const PhaseRange& range(Phase p) const {
    return ranges[static_cast<size_t>(p)];
  }
  // Index of the present phase containing step, or -1.
  int phase_of(int64_t step) const;
};

// Phase construction from a run record. Natural ranges: early covers steps
// before train accuracy first exceeds 0.5; memorization runs from the first
// to one past the last eval with train >= 0.99 and test < 0.5; pre_grok is
// [onset_step, grok_step); post_grok is [grok_step, end_step]. Overlaps are
// resolved by the later phase taking precedence (an earlier phase is clipped
// at the first later present phase's begin). onset_step < 0 marks pre_grok
// absent, grok_step < 0 marks post_grok absent (pre_grok then runs to the
// end); phases whose clipped range is empty are absent.
PhaseSet assign_phases(const std::vector<AccPoint>& evals, int64_t onset_step,
                       int64_t grok_step, int64_t end_step);

// Source matrices for basis construction, each a row-major [rows x cols]
// block: current weights W(t), initial weights W(0), and the running sum of
// gradients through t. Only the field the chosen kind reads must be set.
struct BasisSource {
  const float* w_t = nullptr;
  const float* w_0 = nullptr;
  const float* g_acc = nullptr;
  int rows = 0;
  int cols = 0;
};

struct MatrixBasis {
  Basis basis;             // p = rows*cols; column j is vec(u_j v_j^T)
  bool truncated = false;  // source rank fell below the requested k
  int rank = 0;            // columns kept
};

// Top-k singular directions of the kind's source matrix (weight_svd: W(t);
// delta_w_svd: W(t) - W(0); grad_svd: accumulated gradient), each embedded in
// the matrix's flat row-major coordinates as vec(u_i v_i^T). The embedded
// columns are orthonormal. Singular values at or below 1e-7 * sigma_max are
// treated as rank deficiency: the basis is truncated and flagged; an all-zero
// source truncates to zero columns.
MatrixBasis build_basis(BasisKind kind, const BasisSource& src, int k);

// One retained commutator vector in full flat-parameter coordinates.
struct DeltaSample {
  int64_t step = 0;
  std::vector<float> delta;
};

// Supplies per-matrix basis sources at the latest snapshot at or before a
// step. The archive-backed implementation reads weights from the snapshot
// archive and accumulated gradients from a sibling archive.
class BasisProvider {
 public:
  virtual ~BasisProvider() = default;
  virtual const std::vector<MatrixSpec>& matrices() const = 0;
  // Snapshot step that serves queries at `step`, or -1 when none.
  virtual int64_t resolve_step(int64_t step) const = 0;
  // Fills the sources for matrix `name` at resolved step `snap`. Vectors left
  // empty are unavailable (their basis kinds are skipped). Returns false when
  // the matrix or snapshot is missing entirely.
  virtual bool source_at(int64_t snap, const std::string& name,
                         std::vector<float>& w_t, std::vector<float>& w_0,
                         std::vector<float>& g_acc, int& rows,
                         int& cols) const = 0;
};

class ArchiveBasisProvider : public BasisProvider {
 public:
  // grads may be null; grad_svd cells then come out missing.
  ArchiveBasisProvider(const SnapshotArchive* weights,
                       const SnapshotArchive* grads);

  const std::vector<MatrixSpec>& matrices() const override;
  int64_t resolve_step(int64_t step) const override;
  bool source_at(int64_t snap, const std::string& name,
                 std::vector<float>& w_t, std::vector<float>& w_0,
                 std::vector<float>& g_acc, int& rows,
                 int& cols) const override;

 private:
  const SnapshotArchive* weights_ = nullptr;
  const SnapshotArchive* grads_ = nullptr;
};

struct PhaseBasisCell {
  bool present = false;
  double ratio = 0;  // mean exec/random ratio over contributions
  int n = 0;         // (sample, matrix) contributions
};

struct PhaseRatioTable {
  std::array<std::array<PhaseBasisCell, kNumBasisKinds>, kNumPhases> cells;

  const PhaseBasisCell& cell(Phase p, BasisKind k) const {
    return cells[static_cast<size_t>(p)][static_cast<size_t>(k)];
  }
};

// Mean exec/random projection ratio per (phase, basis kind). Each commutator
// sample contributes one ratio per archive matrix: the sample's block for
// that matrix is projected onto the basis built from the latest snapshot at
// or before the sample's step (block projection), and the same block is
// scored against n_rand random orthonormal bases of matching rank. Samples in
// no phase, zero blocks, rank-zero bases, and unavailable sources are
// skipped; a cell with no contributions is missing.
PhaseRatioTable phase_ratios(const PhaseSet& phases,
                             const std::vector<DeltaSample>& samples,
                             const BasisProvider& provider, int k, int n_rand,
                             Rng& rng);

// Wide CSV: header "phase,weight_svd,delta_w_svd,grad_svd", one row per
// present phase, empty fields for missing cells.
std::string phase_ratio_csv(const PhaseRatioTable& table,
                            const PhaseSet& phases);

}  // namespace gk
