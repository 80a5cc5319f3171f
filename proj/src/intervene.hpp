#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "archive.hpp"
#include "probes.hpp"
#include "rng.hpp"

namespace gk {

// Causal intervention conditions applied during training: a one-time kick
// along the dominant commutator direction, periodic gradient-orthogonal
// noise, and gradient projection/penalty onto a learned subspace, plus the
// dose-response sweep driver.

enum class Condition {
  baseline = 0,
  kick_1a = 1,
  noise_1a = 2,
  project_1b = 3,
  penalty_1b = 4,
};

const char* condition_name(Condition c);
// Throws on an unknown name.
Condition condition_from_name(const std::string& name);

struct InterventionSpec {
  Condition condition = Condition::baseline;
  double strength = 0;  // kappa (kick), nu (noise), or s in [0,1] (penalty)
  int64_t trigger_step = -1;  // kick fire step; -1 = paired baseline onset
  int64_t period = 10;        // noise cadence in optimizer steps
  std::string basis_run;      // 1B: run id whose trajectory supplies the basis
  int basis_k = 5;
};

// One-time parameter kick theta += kappa * ||theta|| * u, where u is the top
// left-singular direction of the matrix whose columns are the delta samples
// (a single sample gives u = delta/||delta||; u's sign is fixed so its
// largest-magnitude coordinate is positive). Returns false and leaves theta
// untouched when every sample is zero.
bool apply_kick(float* theta, int64_t n,
                const std::vector<std::vector<float>>& deltas, double kappa);

// Periodic post-optimizer noise injection: every `period` completed updates,
// draw a Gaussian vector, remove its component along the current flattened
// gradient, rescale to nu * ||eta * g||, and add it to the parameters. A zero
// gradient skips the orthogonalization (raw Gaussian direction, scaled with
// ||g|| treated as 1) and sets flagged_zero_grad.
struct NoiseHook {
  int64_t period = 10;
  double nu = 1.0;
  Rng rng;
  bool flagged_zero_grad = false;

  // updates_done is the 1-based count of completed optimizer steps; the hook
  // fires when updates_done is a multiple of period.
  void apply(float* theta, const float* grad, int64_t n, double eta,
             int64_t updates_done);
};

// Orthonormal bases for a set of targeted matrices, each embedded at its
// offset in the flat parameter vector.
struct MatrixBases {
  std::vector<std::string> names;
  std::vector<int64_t> offsets;
  std::vector<Basis> bases;  // basis.p = rows*cols of the matrix
};

// Gradient hook (before clipping): per targeted matrix g <- B B^T g;
// untargeted coordinates untouched.
void apply_project(float* grad, int64_t n, const MatrixBases& mb);

// Gradient hook: per targeted matrix g <- g_par + (1 - s) * g_perp with
// s in [0, 1]; s = 0 is the identity, s = 1 equals apply_project.
void apply_penalty(float* grad, int64_t n, const MatrixBases& mb, double s);

// Top-k trajectory PCA basis for every attention matrix in the archive (names
// containing ".attn.", or ".self."/".cross." for the seq2seq decoder),
// embedded at the matrices' parameter offsets. Throws when any targeted
// matrix yields no valid basis.
MatrixBases attention_trajectory_bases(const SnapshotArchive& archive, int k);

struct DoseCell {
  Condition condition = Condition::baseline;
  double strength = 0;
  uint64_t seed = 0;
  int64_t grok_step = -1;
  int64_t onset_step = -1;
  std::string flags;
  bool failed = false;
};

using DoseRunFn =
    std::function<DoseCell(const InterventionSpec&, uint64_t seed)>;

// One run per (spec, seed) cell. A run that throws is recorded as failed
// (flags carry the message) and the sweep continues.
std::vector<DoseCell> dose_response(const std::vector<InterventionSpec>& grid,
                                    const std::vector<uint64_t>& seeds,
                                    const DoseRunFn& run);

// CSV with header condition,strength,seed,grok_step,onset_step,flags.
std::string dose_csv(const std::vector<DoseCell>& cells);

}  // namespace gk
