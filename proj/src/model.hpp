#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "params.hpp"
#include "tasks.hpp"
#include "tensor.hpp"

namespace gk {

// Pre-LN transformers, no biases outside layernorm, learned absolute position
// embeddings, untied embeddings/output heads. Every weight matrix is
// initialized U(-1/sqrt(d_model), +1/sqrt(d_model)); layernorm starts at
// gain 1, bias 0.

struct DyckModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int vocab = 3;       // pad, '(', ')'
  int n_classes = 13;  // depths 0..12
  int max_len = 24;
};

struct ScanModelConfig {
  int d_model = 256;
  int n_layers = 3;  // per side
  int n_heads = 4;
  int d_ff = 512;
  int src_vocab = 21;  // joint source vocabulary (specials + commands + actions)
  int act_vocab = 7;   // output head classes (actions + eos)
  int max_cmd = 9;     // encoder positions (8 command tokens + boundary)
  int max_act = 14;    // decoder positions (13 action tokens + boundary)
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  int64_t n_items = 0;  // tokens (Dyck) or sequences (SCAN)
};

// Causal decoder-only model predicting per-position stack depth.
template <typename T>
class DyckModel {
 public:
  explicit DyckModel(const DyckModelConfig& cfg);

  const DyckModelConfig& config() const { return cfg_; }
  const ParamSet& params() const { return ps_; }
  std::vector<T> init(uint64_t seed) const;
  std::vector<std::string> default_snapshot_matrices() const;

  // Mean cross-entropy over all positions; grad (same length as params) is
  // overwritten. Returns the loss.
  double loss_and_grad(const T* theta, const Batch& batch, T* grad);
  double loss_only(const T* theta, const Batch& batch);

  // Token-level accuracy + mean loss over a pool, evaluated in chunks.
  EvalResult evaluate(const T* theta, const std::vector<DyckExample>& pool,
                      int chunk = 500);

  // Per-position logits for one batch (no gradient); row-major
  // [n*t, n_classes].
  std::vector<T> logits(const T* theta, const Batch& batch);

 private:
  struct Blk {
    int ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, up, down;
  };
  struct Built {
    int logits = -1;
    int loss = -1;
  };
  Built build(Tape<T>& tape, const T* theta, const Batch& batch, bool with_loss,
              std::vector<int>* leaf_ids);

  DyckModelConfig cfg_;
  ParamSet ps_;
  int tok_ = -1, pos_ = -1, flng_ = -1, flnb_ = -1, head_ = -1;
  std::vector<Blk> blocks_;
  Tape<T> tape_{true};
  Tape<T> eval_tape_{false};
};

// Encoder-decoder model mapping command token sequences to action sequences.
template <typename T>
class ScanModel {
 public:
  explicit ScanModel(const ScanModelConfig& cfg);

  const ScanModelConfig& config() const { return cfg_; }
  const ParamSet& params() const { return ps_; }
  std::vector<T> init(uint64_t seed) const;
  std::vector<std::string> default_snapshot_matrices() const;

  double loss_and_grad(const T* theta, const Batch& batch, T* grad);
  double loss_only(const T* theta, const Batch& batch);

  // Sequence-level exact-match accuracy under greedy decoding, plus mean
  // teacher-forced loss over the same pool.
  EvalResult evaluate(const T* theta, const std::vector<ScanExample>& pool,
                      const ScanVocab& vocab, int chunk = 128);

  // Greedy decode of one batch; per example, the emitted action classes up to
  // (not including) eos, cut at max_act if eos never appears.
  std::vector<std::vector<int32_t>> decode(const T* theta, const Batch& batch,
                                           const ScanVocab& vocab);

 private:
  struct EncBlk {
    int ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, up, down;
  };
  struct DecBlk {
    int ln1g, ln1b, swq, swk, swv, swo;
    int ln2g, ln2b, cwq, cwk, cwv, cwo;
    int ln3g, ln3b, up, down;
  };
  struct Built {
    int logits = -1;
    int loss = -1;
  };
  int encoder_graph(Tape<T>& tape, const std::vector<int>& ids,
                    const Batch& batch);
  Built decoder_graph(Tape<T>& tape, const std::vector<int>& ids, int enc_h,
                      const Batch& batch, const int32_t* dec_in, int t_out,
                      bool with_loss);

  ScanModelConfig cfg_;
  ParamSet ps_;
  int etok_ = -1, epos_ = -1, dtok_ = -1, dpos_ = -1;
  int elng_ = -1, elnb_ = -1, dlng_ = -1, dlnb_ = -1, head_ = -1;
  std::vector<EncBlk> eblocks_;
  std::vector<DecBlk> dblocks_;
  Tape<T> tape_{true};
  Tape<T> eval_tape_{false};
};

extern template class DyckModel<float>;
extern template class DyckModel<double>;
extern template class ScanModel<float>;
extern template class ScanModel<double>;

}  // namespace gk
