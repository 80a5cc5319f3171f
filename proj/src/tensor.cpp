#include "tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gk {

namespace {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string shape_str(int ndim, const Shape& s) {
  std::string out = "[";
  for (int i = 0; i < ndim; ++i) {
    if (i) out += "x";
    out += std::to_string(s[size_t(i)]);
  }
  return out + "]";
}

}  // namespace

template <typename T>
void Tape<T>::check(bool ok, const std::string& msg) const {
  if (!ok) throw std::runtime_error(msg);
}

template <typename T>
void Tape<T>::reset() {
  slots_.clear();
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  aux_.clear();
  ints_.clear();
  backward_ran_ = false;
}

template <typename T>
int Tape<T>::push_slot(int ndim, const Shape& shape, bool rg) {
  check(ndim >= 1 && ndim <= 4, "tape: ndim must be in [1,4]");
  int64_t n = 1;
  for (int i = 0; i < ndim; ++i) {
    check(shape[size_t(i)] > 0, "tape: dims must be positive, got " +
                                    shape_str(ndim, shape));
    n *= shape[size_t(i)];
  }
  Slot s;
  s.ndim = ndim;
  s.shape = shape;
  s.off = static_cast<int64_t>(vals_.size());
  s.n = n;
  s.rg = rg;
  vals_.resize(vals_.size() + size_t(n));
  slots_.push_back(s);
  return static_cast<int>(slots_.size()) - 1;
}

template <typename T>
int Tape<T>::leaf(int ndim, Shape shape, const T* data, bool requires_grad) {
  int id = push_slot(ndim, shape, requires_grad);
  T* v = mutable_val(id);
  if (data) {
    std::memcpy(v, data, sizeof(T) * size_t(numel(id)));
  } else {
    std::memset(v, 0, sizeof(T) * size_t(numel(id)));
  }
  return id;
}

template <typename T>
int Tape<T>::alias(int src, int ndim, Shape shape) {
  int64_t n = 1;
  for (int i = 0; i < ndim; ++i) n *= shape[size_t(i)];
  check(n == numel(src), "alias: element count mismatch, " +
                             shape_str(this->ndim(src), this->shape(src)) +
                             " vs " + shape_str(ndim, shape));
  Slot s = slots_[size_t(src)];
  s.ndim = ndim;
  s.shape = shape;
  slots_.push_back(s);  // same offset: storage and gradient are shared
  return static_cast<int>(slots_.size()) - 1;
}

template <typename T>
int Tape<T>::embed(int table, const int32_t* ids, int64_t n_ids) {
  check(ndim(table) == 2, "embed: table must be 2-D, got " +
                              shape_str(ndim(table), shape(table)));
  const int v = dim(table, 0), d = dim(table, 1);
  for (int64_t i = 0; i < n_ids; ++i) {
    check(ids[i] >= 0 && ids[i] < v,
          "embed: id " + std::to_string(ids[i]) + " out of range [0," +
              std::to_string(v) + ")");
  }
  int out = push_slot(2, {int(n_ids), d, 1, 1}, slots_[size_t(table)].rg);
  int64_t ioff = static_cast<int64_t>(ints_.size());
  ints_.insert(ints_.end(), ids, ids + n_ids);
  const T* tv = val(table);
  T* ov = mutable_val(out);
  for (int64_t i = 0; i < n_ids; ++i) {
    std::memcpy(ov + i * d, tv + int64_t(ids[i]) * d, sizeof(T) * size_t(d));
  }
  push_node({Op::kEmbed, out, table, -1, -1, 0, ioff, n_ids, T(0)});
  return out;
}

template <typename T>
int Tape<T>::add_pos(int x, int table) {
  check(ndim(x) == 3 && ndim(table) == 2, "add_pos: need [B,T,D] + [P,D]");
  const int b = dim(x, 0), t = dim(x, 1), d = dim(x, 2);
  check(dim(table, 1) == d && dim(table, 0) >= t,
        "add_pos: table " + shape_str(2, shape(table)) + " too small for " +
            shape_str(3, shape(x)));
  int out = push_slot(3, shape(x), slots_[size_t(x)].rg || slots_[size_t(table)].rg);
  const T* xv = val(x);
  const T* tv = val(table);
  T* ov = mutable_val(out);
  for (int bi = 0; bi < b; ++bi) {
    for (int ti = 0; ti < t; ++ti) {
      const T* xr = xv + (int64_t(bi) * t + ti) * d;
      const T* tr = tv + int64_t(ti) * d;
      T* orow = ov + (int64_t(bi) * t + ti) * d;
      for (int k = 0; k < d; ++k) orow[k] = xr[k] + tr[k];
    }
  }
  push_node({Op::kAddPos, out, x, table, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::add(int a, int b) {
  check(numel(a) == numel(b) && ndim(a) == ndim(b),
        "add: shape mismatch " + shape_str(ndim(a), shape(a)) + " vs " +
            shape_str(ndim(b), shape(b)));
  int out = push_slot(ndim(a), shape(a), slots_[size_t(a)].rg || slots_[size_t(b)].rg);
  const T* av = val(a);
  const T* bv = val(b);
  T* ov = mutable_val(out);
  const int64_t n = numel(out);
  for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  push_node({Op::kAdd, out, a, b, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::add_mask_ts(int x, int mask) {
  check(ndim(x) == 4 && ndim(mask) == 2, "add_mask_ts: need [B,H,T,S] + [T,S]");
  const int b = dim(x, 0), h = dim(x, 1), t = dim(x, 2), s = dim(x, 3);
  check(dim(mask, 0) == t && dim(mask, 1) == s,
        "add_mask_ts: mask " + shape_str(2, shape(mask)) + " vs scores " +
            shape_str(4, shape(x)));
  int out = push_slot(4, shape(x), slots_[size_t(x)].rg);
  const T* xv = val(x);
  const T* mv = val(mask);
  T* ov = mutable_val(out);
  const int64_t plane = int64_t(t) * s;
  for (int64_t g = 0; g < int64_t(b) * h; ++g) {
    const T* xp = xv + g * plane;
    T* op = ov + g * plane;
    for (int64_t i = 0; i < plane; ++i) op[i] = xp[i] + mv[i];
  }
  push_node({Op::kAddMaskTS, out, x, mask, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::add_mask_bs(int x, int mask) {
  check(ndim(x) == 4 && ndim(mask) == 2, "add_mask_bs: need [B,H,T,S] + [B,S]");
  const int b = dim(x, 0), h = dim(x, 1), t = dim(x, 2), s = dim(x, 3);
  check(dim(mask, 0) == b && dim(mask, 1) == s,
        "add_mask_bs: mask " + shape_str(2, shape(mask)) + " vs scores " +
            shape_str(4, shape(x)));
  int out = push_slot(4, shape(x), slots_[size_t(x)].rg);
  const T* xv = val(x);
  const T* mv = val(mask);
  T* ov = mutable_val(out);
  for (int bi = 0; bi < b; ++bi) {
    const T* mr = mv + int64_t(bi) * s;
    for (int hi = 0; hi < h; ++hi) {
      for (int ti = 0; ti < t; ++ti) {
        int64_t off = ((int64_t(bi) * h + hi) * t + ti) * s;
        for (int si = 0; si < s; ++si) ov[off + si] = xv[off + si] + mr[si];
      }
    }
  }
  push_node({Op::kAddMaskBS, out, x, mask, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::matmul(int a, int b) {
  check(ndim(a) == 2 && ndim(b) == 2, "matmul: operands must be 2-D, got " +
                                          shape_str(ndim(a), shape(a)) + " x " +
                                          shape_str(ndim(b), shape(b)));
  const int m = dim(a, 0), k = dim(a, 1), k2 = dim(b, 0), n = dim(b, 1);
  check(k == k2, "matmul: inner dims differ: " + shape_str(2, shape(a)) +
                     " x " + shape_str(2, shape(b)));
  int out = push_slot(2, {m, n, 1, 1}, slots_[size_t(a)].rg || slots_[size_t(b)].rg);
  MatMap<T>(mutable_val(out), m, n).noalias() =
      CMatMap<T>(val(a), m, k) * CMatMap<T>(val(b), k, n);
  push_node({Op::kMatmul, out, a, b, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::bmm(int a, int b) {
  check(ndim(a) == 4 && ndim(b) == 4, "bmm: operands must be 4-D");
  const int g0 = dim(a, 0), g1 = dim(a, 1), m = dim(a, 2), k = dim(a, 3);
  check(dim(b, 0) == g0 && dim(b, 1) == g1 && dim(b, 2) == k,
        "bmm: shape mismatch " + shape_str(4, shape(a)) + " x " +
            shape_str(4, shape(b)));
  const int n = dim(b, 3);
  int out = push_slot(4, {g0, g1, m, n}, slots_[size_t(a)].rg || slots_[size_t(b)].rg);
  const int64_t gs = int64_t(g0) * g1;
  const T* av = val(a);
  const T* bv = val(b);
  T* ov = mutable_val(out);
  for (int64_t g = 0; g < gs; ++g) {
    MatMap<T>(ov + g * m * n, m, n).noalias() =
        CMatMap<T>(av + g * m * k, m, k) * CMatMap<T>(bv + g * k * n, k, n);
  }
  push_node({Op::kBmm, out, a, b, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::bmm_nt(int a, int b, T alpha) {
  check(ndim(a) == 4 && ndim(b) == 4, "bmm_nt: operands must be 4-D");
  const int g0 = dim(a, 0), g1 = dim(a, 1), m = dim(a, 2), k = dim(a, 3);
  check(dim(b, 0) == g0 && dim(b, 1) == g1 && dim(b, 3) == k,
        "bmm_nt: shape mismatch " + shape_str(4, shape(a)) + " x " +
            shape_str(4, shape(b)));
  const int n = dim(b, 2);
  int out = push_slot(4, {g0, g1, m, n}, slots_[size_t(a)].rg || slots_[size_t(b)].rg);
  const int64_t gs = int64_t(g0) * g1;
  const T* av = val(a);
  const T* bv = val(b);
  T* ov = mutable_val(out);
  for (int64_t g = 0; g < gs; ++g) {
    MatMap<T>(ov + g * m * n, m, n).noalias() =
        alpha * (CMatMap<T>(av + g * m * k, m, k) *
                 CMatMap<T>(bv + g * n * k, n, k).transpose());
  }
  push_node({Op::kBmmNT, out, a, b, -1, 0, 0, 0, alpha});
  return out;
}

template <typename T>
int Tape<T>::swap12(int x) {
  check(ndim(x) == 4, "swap12: operand must be 4-D");
  const int a = dim(x, 0), b = dim(x, 1), c = dim(x, 2), d = dim(x, 3);
  int out = push_slot(4, {a, c, b, d}, slots_[size_t(x)].rg);
  const T* xv = val(x);
  T* ov = mutable_val(out);
  for (int ai = 0; ai < a; ++ai) {
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        const T* src = xv + ((int64_t(ai) * b + bi) * c + ci) * d;
        T* dst = ov + ((int64_t(ai) * c + ci) * b + bi) * d;
        std::memcpy(dst, src, sizeof(T) * size_t(d));
      }
    }
  }
  push_node({Op::kSwap12, out, x, -1, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::relu(int x) {
  int out = push_slot(ndim(x), shape(x), slots_[size_t(x)].rg);
  const T* xv = val(x);
  T* ov = mutable_val(out);
  const int64_t n = numel(out);
  for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  push_node({Op::kRelu, out, x, -1, -1, 0, 0, 0, T(0)});
  return out;
}

template <typename T>
int Tape<T>::layernorm(int x, int gain, int bias, T eps) {
  const int d = dim(x, ndim(x) - 1);
  check(ndim(gain) == 1 && dim(gain, 0) == d && ndim(bias) == 1 &&
            dim(bias, 0) == d,
        "layernorm: gain/bias must be [" + std::to_string(d) + "]");
  int out = push_slot(ndim(x), shape(x),
                      slots_[size_t(x)].rg || slots_[size_t(gain)].rg ||
                          slots_[size_t(bias)].rg);
  const int64_t rows = numel(x) / d;
  int64_t aux_off = static_cast<int64_t>(aux_.size());
  if (grad_enabled_) aux_.resize(aux_.size() + size_t(2 * rows));
  const T* xv = val(x);
  const T* gv = val(gain);
  const T* bv = val(bias);
  T* ov = mutable_val(out);
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T* orow = ov + r * d;
    double mu = 0;
    for (int i = 0; i < d; ++i) mu += double(xr[i]);
    mu /= d;
    double var = 0;
    for (int i = 0; i < d; ++i) {
      double c = double(xr[i]) - mu;
      var += c * c;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + double(eps));
    for (int i = 0; i < d; ++i) {
      orow[i] = T((double(xr[i]) - mu) * rstd) * gv[i] + bv[i];
    }
    if (grad_enabled_) {
      aux_[size_t(aux_off + 2 * r)] = T(mu);
      aux_[size_t(aux_off + 2 * r + 1)] = T(rstd);
    }
  }
  push_node({Op::kLayerNorm, out, x, gain, bias, aux_off, 0, rows, eps});
  return out;
}

template <typename T>
int Tape<T>::softmax(int x) {
  const int d = dim(x, ndim(x) - 1);
  int out = push_slot(ndim(x), shape(x), slots_[size_t(x)].rg);
  const int64_t rows = numel(x) / d;
  const T* xv = val(x);
  T* ov = mutable_val(out);
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T* orow = ov + r * d;
    T mx = xr[0];
    for (int i = 1; i < d; ++i) mx = xr[i] > mx ? xr[i] : mx;
    double sum = 0;
    for (int i = 0; i < d; ++i) {
      double e = std::exp(double(xr[i] - mx));
      orow[i] = T(e);
      sum += e;
    }
    double inv = 1.0 / sum;
    for (int i = 0; i < d; ++i) orow[i] = T(double(orow[i]) * inv);
  }
  push_node({Op::kSoftmax, out, x, -1, -1, 0, 0, rows, T(0)});
  return out;
}

template <typename T>
int Tape<T>::cross_entropy(int logits, const int32_t* targets, int64_t n,
                           int ignore_index) {
  check(ndim(logits) == 2, "cross_entropy: logits must be 2-D, got " +
                               shape_str(ndim(logits), shape(logits)));
  const int rows = dim(logits, 0), c = dim(logits, 1);
  check(n == rows, "cross_entropy: " + std::to_string(n) + " targets for " +
                       std::to_string(rows) + " rows");
  for (int64_t i = 0; i < n; ++i) {
    check(targets[i] == ignore_index || (targets[i] >= 0 && targets[i] < c),
          "cross_entropy: target " + std::to_string(targets[i]) +
              " out of range [0," + std::to_string(c) + ")");
  }
  int out = push_slot(1, {1, 1, 1, 1}, slots_[size_t(logits)].rg);
  int64_t ioff = static_cast<int64_t>(ints_.size());
  ints_.insert(ints_.end(), targets, targets + n);
  int64_t aux_off = static_cast<int64_t>(aux_.size());
  if (grad_enabled_) aux_.resize(aux_.size() + size_t(rows));
  const T* lv = val(logits);
  double loss = 0;
  int64_t counted = 0;
  for (int64_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_index) {
      if (grad_enabled_) aux_[size_t(aux_off + r)] = T(0);
      continue;
    }
    const T* lr = lv + r * c;
    T mx = lr[0];
    for (int i = 1; i < c; ++i) mx = lr[i] > mx ? lr[i] : mx;
    double sum = 0;
    for (int i = 0; i < c; ++i) sum += std::exp(double(lr[i] - mx));
    double lse = double(mx) + std::log(sum);
    loss += lse - double(lr[targets[r]]);
    if (grad_enabled_) aux_[size_t(aux_off + r)] = T(lse);
    ++counted;
  }
  *mutable_val(out) = counted > 0 ? T(loss / double(counted)) : T(0);
  Node node{Op::kCrossEntropy, out, logits, -1, ignore_index, aux_off, ioff,
            counted, T(0)};
  push_node(node);
  return out;
}

template <typename T>
void Tape<T>::backward(int loss) {
  check(grad_enabled_, "backward: gradients disabled on this tape");
  check(!backward_ran_, "backward: tape already swept; reset() first");
  check(numel(loss) == 1, "backward: loss must be scalar, got " +
                              shape_str(ndim(loss), shape(loss)));
  grads_.assign(vals_.size(), T(0));
  grads_[size_t(slots_[size_t(loss)].off)] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!slots_[size_t(it->out)].rg) continue;
    backward_node(*it);
  }
  backward_ran_ = true;
}

template <typename T>
void Tape<T>::backward_node(const Node& nd) {
  const T* go = grads_.data() + slots_[size_t(nd.out)].off;
  auto g = [&](int id) { return grads_.data() + slots_[size_t(id)].off; };
  auto rg = [&](int id) { return slots_[size_t(id)].rg; };

  switch (nd.op) {
    case Op::kLeaf:
      break;
    case Op::kEmbed: {
      if (!rg(nd.a)) break;
      const int d = dim(nd.out, 1);
      const int32_t* ids = ints_.data() + nd.iaux;
      T* gt = g(nd.a);
      for (int64_t i = 0; i < nd.count; ++i) {
        T* dst = gt + int64_t(ids[i]) * d;
        const T* src = go + i * d;
        for (int k = 0; k < d; ++k) dst[k] += src[k];
      }
      break;
    }
    case Op::kAddPos: {
      const int b = dim(nd.out, 0), t = dim(nd.out, 1), d = dim(nd.out, 2);
      if (rg(nd.a)) {
        T* gx = g(nd.a);
        const int64_t n = numel(nd.out);
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
      }
      if (rg(nd.b)) {
        T* gt = g(nd.b);
        for (int bi = 0; bi < b; ++bi) {
          for (int ti = 0; ti < t; ++ti) {
            const T* src = go + (int64_t(bi) * t + ti) * d;
            T* dst = gt + int64_t(ti) * d;
            for (int k = 0; k < d; ++k) dst[k] += src[k];
          }
        }
      }
      break;
    }
    case Op::kAdd: {
      const int64_t n = numel(nd.out);
      for (int in : {nd.a, nd.b}) {
        if (!rg(in)) continue;
        T* gi = g(in);
        for (int64_t i = 0; i < n; ++i) gi[i] += go[i];
      }
      break;
    }
    case Op::kAddMaskTS:
    case Op::kAddMaskBS: {
      if (rg(nd.a)) {
        T* gx = g(nd.a);
        const int64_t n = numel(nd.out);
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
      }
      // Masks are constants in both architectures; no gradient is propagated
      // to nd.b (rg is false for mask leaves).
      break;
    }
    case Op::kMatmul: {
      const int m = dim(nd.a, 0), k = dim(nd.a, 1), n = dim(nd.b, 1);
      if (rg(nd.a)) {
        MatMap<T>(g(nd.a), m, k).noalias() +=
            CMatMap<T>(go, m, n) * CMatMap<T>(val(nd.b), k, n).transpose();
      }
      if (rg(nd.b)) {
        MatMap<T>(g(nd.b), k, n).noalias() +=
            CMatMap<T>(val(nd.a), m, k).transpose() * CMatMap<T>(go, m, n);
      }
      break;
    }
    case Op::kBmm: {
      const int m = dim(nd.a, 2), k = dim(nd.a, 3), n = dim(nd.b, 3);
      const int64_t gs = int64_t(dim(nd.a, 0)) * dim(nd.a, 1);
      for (int64_t gi = 0; gi < gs; ++gi) {
        const T* gop = go + gi * m * n;
        if (rg(nd.a)) {
          MatMap<T>(g(nd.a) + gi * m * k, m, k).noalias() +=
              CMatMap<T>(gop, m, n) *
              CMatMap<T>(val(nd.b) + gi * k * n, k, n).transpose();
        }
        if (rg(nd.b)) {
          MatMap<T>(g(nd.b) + gi * k * n, k, n).noalias() +=
              CMatMap<T>(val(nd.a) + gi * m * k, m, k).transpose() *
              CMatMap<T>(gop, m, n);
        }
      }
      break;
    }
    case Op::kBmmNT: {
      const int m = dim(nd.a, 2), k = dim(nd.a, 3), n = dim(nd.b, 2);
      const int64_t gs = int64_t(dim(nd.a, 0)) * dim(nd.a, 1);
      for (int64_t gi = 0; gi < gs; ++gi) {
        const T* gop = go + gi * m * n;
        if (rg(nd.a)) {
          MatMap<T>(g(nd.a) + gi * m * k, m, k).noalias() +=
              nd.alpha * (CMatMap<T>(gop, m, n) *
                          CMatMap<T>(val(nd.b) + gi * n * k, n, k));
        }
        if (rg(nd.b)) {
          MatMap<T>(g(nd.b) + gi * n * k, n, k).noalias() +=
              nd.alpha * (CMatMap<T>(gop, m, n).transpose() *
                          CMatMap<T>(val(nd.a) + gi * m * k, m, k));
        }
      }
      break;
    }
    case Op::kSwap12: {
      if (!rg(nd.a)) break;
      const int a = dim(nd.a, 0), b = dim(nd.a, 1), c = dim(nd.a, 2),
                d = dim(nd.a, 3);
      T* gx = g(nd.a);
      for (int ai = 0; ai < a; ++ai) {
        for (int bi = 0; bi < b; ++bi) {
          for (int ci = 0; ci < c; ++ci) {
            const T* src = go + ((int64_t(ai) * c + ci) * b + bi) * d;
            T* dst = gx + ((int64_t(ai) * b + bi) * c + ci) * d;
            for (int k = 0; k < d; ++k) dst[k] += src[k];
          }
        }
      }
      break;
    }
    case Op::kRelu: {
      if (!rg(nd.a)) break;
      const T* ov = val(nd.out);
      T* gx = g(nd.a);
      const int64_t n = numel(nd.out);
      for (int64_t i = 0; i < n; ++i) {
        if (ov[i] > T(0)) gx[i] += go[i];
      }
      break;
    }
    case Op::kLayerNorm: {
      const int d = dim(nd.out, ndim(nd.out) - 1);
      const int64_t rows = nd.count;
      const T* xv = val(nd.a);
      const T* gv = val(nd.b);
      T* gx = rg(nd.a) ? g(nd.a) : nullptr;
      T* gg = rg(nd.b) ? g(nd.b) : nullptr;
      T* gb = rg(nd.c) ? g(nd.c) : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const double mu = double(aux_[size_t(nd.aux + 2 * r)]);
        const double rstd = double(aux_[size_t(nd.aux + 2 * r + 1)]);
        const T* xr = xv + r * d;
        const T* gor = go + r * d;
        double a1 = 0, a2 = 0;
        for (int i = 0; i < d; ++i) {
          double xh = (double(xr[i]) - mu) * rstd;
          double dxh = double(gor[i]) * double(gv[i]);
          a1 += dxh;
          a2 += dxh * xh;
        }
        a1 /= d;
        a2 /= d;
        for (int i = 0; i < d; ++i) {
          double xh = (double(xr[i]) - mu) * rstd;
          if (gx) {
            double dxh = double(gor[i]) * double(gv[i]);
            gx[r * d + i] += T(rstd * (dxh - a1 - xh * a2));
          }
          if (gg) gg[i] += T(double(gor[i]) * xh);
          if (gb) gb[i] += gor[i];
        }
      }
      break;
    }
    case Op::kSoftmax: {
      if (!rg(nd.a)) break;
      const int d = dim(nd.out, ndim(nd.out) - 1);
      const T* ov = val(nd.out);
      T* gx = g(nd.a);
      for (int64_t r = 0; r < nd.count; ++r) {
        const T* orow = ov + r * d;
        const T* gor = go + r * d;
        double dot = 0;
        for (int i = 0; i < d; ++i) dot += double(gor[i]) * double(orow[i]);
        T* gxr = gx + r * d;
        for (int i = 0; i < d; ++i) {
          gxr[i] += T(double(orow[i]) * (double(gor[i]) - dot));
        }
      }
      break;
    }
    case Op::kCrossEntropy: {
      if (!rg(nd.a) || nd.count == 0) break;
      const int rows = dim(nd.a, 0), c = dim(nd.a, 1);
      const int32_t* tg = ints_.data() + nd.iaux;
      const T* lv = val(nd.a);
      T* gl = g(nd.a);
      const double seed = double(go[0]) / double(nd.count);
      const int ignore = nd.c;
      for (int r = 0; r < rows; ++r) {
        if (tg[r] == ignore) continue;
        const double lse = double(aux_[size_t(nd.aux + r)]);
        const T* lr = lv + int64_t(r) * c;
        T* gr = gl + int64_t(r) * c;
        for (int i = 0; i < c; ++i) {
          double p = std::exp(double(lr[i]) - lse);
          gr[i] += T(seed * (p - (i == tg[r] ? 1.0 : 0.0)));
        }
      }
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace gk
