#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gk {

// Reverse-mode tape over dense row-major tensors, templated on the scalar so
// the same graph code runs in float (production) and double (gradient-check
// shadow). Values and gradients live in two flat arenas owned by the tape;
// a slot is an (offset, shape) view into them. The tape is rebuilt every step
// and reset() keeps the arena capacity, so steady-state training does no
// allocation.
//
// The primitive set is exactly what the two transformer architectures need:
// embedding lookup, broadcast position add, residual add, additive masking,
// matmul, batched matmul (plain and B-transposed), dim-1/2 swap, relu,
// layernorm, masked softmax (softmax over logits pre-shifted by -1e9 masks),
// and mean cross-entropy with an ignore index.

using Shape = std::array<int, 4>;

enum class Op : uint8_t {
  kLeaf,
  kEmbed,
  kAddPos,
  kAdd,
  kAddMaskTS,
  kAddMaskBS,
  kMatmul,
  kBmm,
  kBmmNT,
  kSwap12,
  kRelu,
  kLayerNorm,
  kSoftmax,
  kCrossEntropy,
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  // Drops all slots/nodes but keeps arena capacity for the next build.
  void reset();

  // ---- slot creation ----
  // Copies `data` (may be nullptr for zeros) into the arena.
  int leaf(int ndim, Shape shape, const T* data, bool requires_grad);
  // Reinterprets src's storage under a new shape (element count must match).
  int alias(int src, int ndim, Shape shape);

  // ---- primitives ----
  int embed(int table, const int32_t* ids, int64_t n_ids);
  int add_pos(int x, int table);
  int add(int a, int b);
  int add_mask_ts(int x, int mask);
  int add_mask_bs(int x, int mask);
  int matmul(int a, int b);
  int bmm(int a, int b);
  int bmm_nt(int a, int b, T alpha);
  int swap12(int x);
  int relu(int x);
  int layernorm(int x, int gain, int bias, T eps);
  int softmax(int x);
  int cross_entropy(int logits, const int32_t* targets, int64_t n,
                    int ignore_index);

  // Seeds d(loss)/d(loss)=1 and sweeps the tape once in reverse.
  void backward(int loss);

  // ---- accessors ----
  const T* val(int id) const { return vals_.data() + slots_[size_t(id)].off; }
  T* mutable_val(int id) { return vals_.data() + slots_[size_t(id)].off; }
  const T* grad(int id) const { return grads_.data() + slots_[size_t(id)].off; }
  int64_t numel(int id) const { return slots_[size_t(id)].n; }
  int ndim(int id) const { return slots_[size_t(id)].ndim; }
  const Shape& shape(int id) const { return slots_[size_t(id)].shape; }
  int dim(int id, int d) const { return slots_[size_t(id)].shape[size_t(d)]; }

 private:
  struct Slot {
    int ndim;
    Shape shape;
    int64_t off;
    int64_t n;
    bool rg;  // gradient reaches this slot
  };
  struct Node {
    Op op;
    int out, a, b, c;
    int64_t aux;    // offset into aux_ (saved statistics)
    int64_t iaux;   // offset into ints_ (ids / targets)
    int64_t count;  // op-specific (n_ids, counted rows, ...)
    T alpha;
  };

  int push_slot(int ndim, const Shape& shape, bool rg);
  void push_node(const Node& n) {
    if (grad_enabled_) nodes_.push_back(n);
  }
  void check(bool ok, const std::string& msg) const;
  void backward_node(const Node& n);

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::vector<T> vals_;
  std::vector<T> grads_;
  std::vector<T> aux_;
  std::vector<int32_t> ints_;
  bool grad_enabled_;
  bool backward_ran_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace gk
