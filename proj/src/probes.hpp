#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rng.hpp"
#include "tasks.hpp"

namespace gk {

// Commutator-defect probes (Def. 2.2): composition of two plain-SGD steps on
// batches A and B in both orders from a frozen parameter point. No optimizer
// state is involved, and the caller's parameters are never modified. The
// commutator is evaluated in the gradient-difference form
//   delta = eta * [(g_B(theta) - g_B(theta_A)) - (g_A(theta) - g_A(theta_B))],
// which is algebraically identical to theta_AB - theta_BA but avoids the
// catastrophic float32 cancellation of subtracting two nearly equal parameter
// vectors. Each measurement costs exactly 4 gradient evaluations.

template <typename T>
using GradFn = std::function<double(const T*, const Batch&, T*)>;

struct DefectProbeConfig {
  double eta_comm = 1e-3;
  int k_meas = 5;
  int probe_batch = 16;
  double adapt_floor = 1e-6;   // ||eta*g|| below this triggers rescaling
  double adapt_target = 1e-5;  // rescale eta by 10x until ||eta*g|| >= this
  int interval = 100;          // probe cadence in steps
};

template <typename T>
struct DefectSample {
  bool valid = false;
  double d = 0;        // scale-normalized defect (Eq. 4)
  double eta_eff = 0;  // step size after adaptive scaling
  double norm_a = 0;   // ||eta_eff * g_A||
  double norm_b = 0;   // ||eta_eff * g_B||
  std::vector<T> delta;  // retained only on request
};

template <typename T>
struct DefectMeasurement {
  int64_t step = 0;
  bool valid = false;  // at least one sample valid
  double median = 0, p25 = 0, p75 = 0;
  std::vector<DefectSample<T>> samples;
  std::vector<std::vector<int64_t>> pair_a, pair_b;  // batch identifiers
};

// One (A,B) measurement at frozen theta. Adaptive scaling: if either
// ||eta*g|| falls below cfg.adapt_floor, eta is multiplied by 10 until both
// reach cfg.adapt_target (the effective eta is recorded); if a gradient is
// exactly zero the sample is flagged invalid instead.
template <typename T>
DefectSample<T> measure_defect(const T* theta, int64_t n, GradFn<T> grad_fn,
                               const Batch& a, const Batch& b,
                               const DefectProbeConfig& cfg,
                               bool retain_delta = false);

// K_meas independent pairs sampled without replacement within each pair:
// 2*probe_batch distinct indices per draw, first half A, second half B.
// Percentiles are nearest-rank order statistics over the valid samples
// (K=5: 2nd, 3rd, 4th sorted values).
template <typename T>
DefectMeasurement<T> probe_at_step(
    const T* theta, int64_t n, GradFn<T> grad_fn, int64_t n_train,
    const std::function<Batch(const std::vector<int64_t>&)>& make_batch,
    const DefectProbeConfig& cfg, Rng& rng, int64_t step,
    bool retain_delta = false);

// ------------------------------------------------------------- projections

// Column-major P x K orthonormal basis.
struct Basis {
  int64_t p = 0;
  int k = 0;
  std::vector<double> cols;
};

struct ProjectionResult {
  bool valid = false;
  double rho = 0;        // residual fraction ||delta_perp|| / ||delta||
  double par_norm = 0;   // ||delta_par||
  double perp_norm = 0;  // ||delta_perp||
  int k = 0;
  int64_t p = 0;
};

// delta_par = B B^T delta; rho = ||delta_perp|| / ||delta||. ||delta|| = 0
// yields valid=false (rho undefined).
ProjectionResult project_commutator(const double* delta, const Basis& basis);

// ||B B^T delta|| / ||delta||; NaN when ||delta|| = 0.
double parallel_fraction(const double* delta, const Basis& basis);

// Random K-dimensional orthonormal basis in dimension p (Gaussian + modified
// Gram-Schmidt).
Basis random_orthonormal(int64_t p, int k, Rng& rng);

// Parallel fraction onto `exec` divided by the mean parallel fraction over
// n_rand random bases of the same dimension. NaN when ||delta|| = 0.
double exec_random_ratio(const double* delta, const Basis& exec, int n_rand,
                         Rng& rng);

extern template DefectSample<float> measure_defect<float>(
    const float*, int64_t, GradFn<float>, const Batch&, const Batch&,
    const DefectProbeConfig&, bool);
extern template DefectSample<double> measure_defect<double>(
    const double*, int64_t, GradFn<double>, const Batch&, const Batch&,
    const DefectProbeConfig&, bool);
extern template DefectMeasurement<float> probe_at_step<float>(
    const float*, int64_t, GradFn<float>, int64_t,
    const std::function<Batch(const std::vector<int64_t>&)>&,
    const DefectProbeConfig&, Rng&, int64_t, bool);
extern template DefectMeasurement<double> probe_at_step<double>(
    const double*, int64_t, GradFn<double>, int64_t,
    const std::function<Batch(const std::vector<int64_t>&)>&,
    const DefectProbeConfig&, Rng&, int64_t, bool);

}  // namespace gk
