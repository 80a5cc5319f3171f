#include "probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gk {
namespace {

template <typename T>
double l2(const T* v, int64_t n) {
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += double(v[i]) * double(v[i]);
  return std::sqrt(s);
}

}  // namespace

template <typename T>
DefectSample<T> measure_defect(const T* theta, int64_t n, GradFn<T> grad_fn,
                               const Batch& a, const Batch& b,
                               const DefectProbeConfig& cfg,
                               bool retain_delta) {
  DefectSample<T> out;
  const size_t nn = size_t(n);
  std::vector<T> ga(nn), gb(nn), shifted(nn), gba(nn), gab(nn);
  grad_fn(theta, a, ga.data());
  grad_fn(theta, b, gb.data());
  const double na = l2(ga.data(), n);
  const double nb = l2(gb.data(), n);
  if (na == 0 || nb == 0) return out;  // degenerate: flagged invalid

  double eta = cfg.eta_comm;
  if (eta * na < cfg.adapt_floor || eta * nb < cfg.adapt_floor) {
    const double smaller = std::min(na, nb);
    while (eta * smaller < cfg.adapt_target) {
      eta *= 10.0;
      if (eta > 1e12) return out;  // cannot reach target: flagged invalid
    }
  }

  for (int64_t i = 0; i < n; ++i) shifted[size_t(i)] = theta[i] - T(eta) * ga[size_t(i)];
  grad_fn(shifted.data(), b, gba.data());  // g_B(theta_A)
  for (int64_t i = 0; i < n; ++i) shifted[size_t(i)] = theta[i] - T(eta) * gb[size_t(i)];
  grad_fn(shifted.data(), a, gab.data());  // g_A(theta_B)

  double nd = 0;
  if (retain_delta) out.delta.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const double d =
        eta * ((double(gb[size_t(i)]) - double(gba[size_t(i)])) -
               (double(ga[size_t(i)]) - double(gab[size_t(i)])));
    nd += d * d;
    if (retain_delta) out.delta[size_t(i)] = T(d);
  }
  out.valid = true;
  out.eta_eff = eta;
  out.norm_a = eta * na;
  out.norm_b = eta * nb;
  out.d = std::sqrt(nd) / (out.norm_a * out.norm_b);
  return out;
}

template <typename T>
DefectMeasurement<T> probe_at_step(
    const T* theta, int64_t n, GradFn<T> grad_fn, int64_t n_train,
    const std::function<Batch(const std::vector<int64_t>&)>& make_batch,
    const DefectProbeConfig& cfg, Rng& rng, int64_t step, bool retain_delta) {
  if (cfg.k_meas < 1) throw std::runtime_error("probe_at_step: k_meas < 1");
  if (2 * int64_t(cfg.probe_batch) > n_train) {
    throw std::runtime_error(
        "probe_at_step: probe batch pair larger than training set");
  }
  DefectMeasurement<T> out;
  out.step = step;
  std::vector<double> valid_d;
  for (int k = 0; k < cfg.k_meas; ++k) {
    std::vector<int64_t> pick =
        sample_distinct(n_train, 2 * cfg.probe_batch, rng);
    std::vector<int64_t> ia(pick.begin(), pick.begin() + cfg.probe_batch);
    std::vector<int64_t> ib(pick.begin() + cfg.probe_batch, pick.end());
    Batch a = make_batch(ia);
    Batch b = make_batch(ib);
    out.samples.push_back(
        measure_defect(theta, n, grad_fn, a, b, cfg, retain_delta));
    out.pair_a.push_back(std::move(ia));
    out.pair_b.push_back(std::move(ib));
    if (out.samples.back().valid) valid_d.push_back(out.samples.back().d);
  }
  if (!valid_d.empty()) {
    std::sort(valid_d.begin(), valid_d.end());
    const size_t m = valid_d.size();
    out.valid = true;
    out.p25 = valid_d[(m - 1) / 4];
    out.median = valid_d[(m - 1) / 2];
    out.p75 = valid_d[3 * (m - 1) / 4];
  }
  return out;
}

ProjectionResult project_commutator(const double* delta, const Basis& basis) {
  ProjectionResult r;
  r.k = basis.k;
  r.p = basis.p;
  const double nd = l2(delta, basis.p);
  if (nd == 0) return r;
  std::vector<double> coef(size_t(basis.k), 0.0);
  for (int j = 0; j < basis.k; ++j) {
    const double* col = basis.cols.data() + size_t(j) * size_t(basis.p);
    double s = 0;
    for (int64_t i = 0; i < basis.p; ++i) s += col[i] * delta[i];
    coef[size_t(j)] = s;
  }
  double par2 = 0, perp2 = 0;
  for (int64_t i = 0; i < basis.p; ++i) {
    double par = 0;
    for (int j = 0; j < basis.k; ++j) {
      par += basis.cols[size_t(j) * size_t(basis.p) + size_t(i)] *
             coef[size_t(j)];
    }
    par2 += par * par;
    const double perp = delta[i] - par;
    perp2 += perp * perp;
  }
  r.valid = true;
  r.par_norm = std::sqrt(par2);
  r.perp_norm = std::sqrt(perp2);
  r.rho = r.perp_norm / nd;
  return r;
}

double parallel_fraction(const double* delta, const Basis& basis) {
  ProjectionResult r = project_commutator(delta, basis);
  if (!r.valid) return std::numeric_limits<double>::quiet_NaN();
  return r.par_norm / std::sqrt(r.par_norm * r.par_norm +
                                r.perp_norm * r.perp_norm);
}

Basis random_orthonormal(int64_t p, int k, Rng& rng) {
  if (k < 1 || int64_t(k) > p) {
    throw std::runtime_error("random_orthonormal: invalid dimensions");
  }
  Basis b;
  b.p = p;
  b.k = k;
  b.cols.resize(size_t(p) * size_t(k));
  for (double& x : b.cols) x = rng.next_normal();
  // modified Gram-Schmidt
  for (int j = 0; j < k; ++j) {
    double* col = b.cols.data() + size_t(j) * size_t(p);
    for (int i = 0; i < j; ++i) {
      const double* prev = b.cols.data() + size_t(i) * size_t(p);
      double dot = 0;
      for (int64_t t = 0; t < p; ++t) dot += prev[t] * col[t];
      for (int64_t t = 0; t < p; ++t) col[t] -= dot * prev[t];
    }
    const double nrm = l2(col, p);
    if (nrm < 1e-12) {
      throw std::runtime_error("random_orthonormal: degenerate draw");
    }
    for (int64_t t = 0; t < p; ++t) col[t] /= nrm;
  }
  return b;
}

double exec_random_ratio(const double* delta, const Basis& exec, int n_rand,
                         Rng& rng) {
  const double pf = parallel_fraction(delta, exec);
  if (!(pf == pf)) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0;
  for (int r = 0; r < n_rand; ++r) {
    Basis rb = random_orthonormal(exec.p, exec.k, rng);
    acc += parallel_fraction(delta, rb);
  }
  return pf / (acc / double(n_rand));
}

template DefectSample<float> measure_defect<float>(const float*, int64_t,
                                                   GradFn<float>, const Batch&,
                                                   const Batch&,
                                                   const DefectProbeConfig&,
                                                   bool);
template DefectSample<double> measure_defect<double>(
    const double*, int64_t, GradFn<double>, const Batch&, const Batch&,
    const DefectProbeConfig&, bool);
template DefectMeasurement<float> probe_at_step<float>(
    const float*, int64_t, GradFn<float>, int64_t,
    const std::function<Batch(const std::vector<int64_t>&)>&,
    const DefectProbeConfig&, Rng&, int64_t, bool);
template DefectMeasurement<double> probe_at_step<double>(
    const double*, int64_t, GradFn<double>, int64_t,
    const std::function<Batch(const std::vector<int64_t>&)>&,
    const DefectProbeConfig&, Rng&, int64_t, bool);

}  // namespace gk
