#pragma once

#include <cstdint>
#include <vector>

#include "params.hpp"

namespace gk {

// Rescales the flat gradient to global L2 norm `max_norm` when it exceeds it.
// Returns the pre-clip norm. Throws on a non-finite norm (the caller aborts
// the run with the offending step). The comparison carries a tiny relative
// slack so that clipping is idempotent under float rounding: a vector already
// clipped to max_norm re-measures within a few ulps and must not be rescaled.
template <typename T>
double clip_global(T* grad, int64_t n, double max_norm);

// AdamW with bias correction and decoupled weight decay. The decay term
// -lr*wd*theta applies only to parameters whose ParamInfo has decay=true
// (weight matrices and embeddings; layernorm gains/biases are excluded).
template <typename T>
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t t = 0;
  std::vector<T> m, v;

  void init(int64_t n) {
    m.assign(size_t(n), T(0));
    v.assign(size_t(n), T(0));
    t = 0;
  }

  void step(T* theta, const T* grad, const ParamSet& ps);
};

extern template double clip_global<float>(float*, int64_t, double);
extern template double clip_global<double>(double*, int64_t, double);
extern template struct AdamW<float>;
extern template struct AdamW<double>;

}  // namespace gk
