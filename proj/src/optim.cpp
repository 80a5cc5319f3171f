#include "optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gk {

template <typename T>
double clip_global(T* grad, int64_t n, double max_norm) {
  double sq = 0;
  for (int64_t i = 0; i < n; ++i) {
    double g = double(grad[i]);
    sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    throw std::runtime_error("clip_global: non-finite gradient norm");
  }
  if (norm <= max_norm * (1.0 + 1e-12) || norm == 0.0) return norm;
  T scale = T(max_norm / norm);
  for (int64_t i = 0; i < n; ++i) grad[i] *= scale;
  return norm;
}

template <typename T>
void AdamW<T>::step(T* theta, const T* grad, const ParamSet& ps) {
  if (int64_t(m.size()) != ps.total()) {
    throw std::runtime_error("AdamW: state size does not match parameters");
  }
  t += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (const ParamInfo& p : ps.infos()) {
    const double wd = p.decay ? weight_decay : 0.0;
    for (int64_t i = p.off; i < p.off + p.n; ++i) {
      const double g = double(grad[i]);
      const double mi = beta1 * double(m[size_t(i)]) + (1.0 - beta1) * g;
      const double vi = beta2 * double(v[size_t(i)]) + (1.0 - beta2) * g * g;
      m[size_t(i)] = T(mi);
      v[size_t(i)] = T(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double th = double(theta[i]);
      theta[i] = T(th - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * th);
    }
  }
}

template double clip_global<float>(float*, int64_t, double);
template double clip_global<double>(double*, int64_t, double);
template struct AdamW<float>;
template struct AdamW<double>;

}  // namespace gk
