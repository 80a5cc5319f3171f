#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace gk {
namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
std::vector<int> bind_params(Tape<T>& tp, const ParamSet& ps, const T* theta) {
  std::vector<int> ids(size_t(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    const ParamInfo& p = ps.info(i);
    ids[size_t(i)] = tp.leaf(p.ndim, p.shape, theta + p.off, true);
  }
  return ids;
}

// Multi-head attention over flattened activations: x2 [B*Tq, d] queries,
// kv2 [B*S, d] keys/values, additive mask either [Tq,S] (ts) or [B,S] (bs).
template <typename T>
int attention(Tape<T>& tp, int x2, int kv2, int wq, int wk, int wv, int wo,
              int B, int Tq, int S, int n_heads, int mask, bool mask_ts) {
  const int d = tp.dim(x2, 1);
  const int dh = d / n_heads;
  const T alpha = T(1.0 / std::sqrt(double(dh)));
  int q = tp.swap12(tp.alias(tp.matmul(x2, wq), 4, {B, Tq, n_heads, dh}));
  int k = tp.swap12(tp.alias(tp.matmul(kv2, wk), 4, {B, S, n_heads, dh}));
  int v = tp.swap12(tp.alias(tp.matmul(kv2, wv), 4, {B, S, n_heads, dh}));
  int scores = tp.bmm_nt(q, k, alpha);
  scores =
      mask_ts ? tp.add_mask_ts(scores, mask) : tp.add_mask_bs(scores, mask);
  int ctx = tp.bmm(tp.softmax(scores), v);  // [B,H,Tq,dh]
  int ctx2 = tp.alias(tp.swap12(ctx), 2, {B * Tq, d, 1, 1});
  return tp.matmul(ctx2, wo);
}

template <typename T>
int mlp(Tape<T>& tp, int x2, int up, int down) {
  return tp.matmul(tp.relu(tp.matmul(x2, up)), down);
}

template <typename T>
std::vector<T> causal_mask(int t) {
  std::vector<T> m(size_t(t) * size_t(t), T(0));
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) m[size_t(i) * size_t(t) + size_t(j)] = T(-1e9);
  }
  return m;
}

template <typename T>
std::vector<T> length_mask(const std::vector<int32_t>& len, int s) {
  std::vector<T> m(len.size() * size_t(s), T(0));
  for (size_t b = 0; b < len.size(); ++b) {
    for (int j = len[b]; j < s; ++j) m[b * size_t(s) + size_t(j)] = T(-1e9);
  }
  return m;
}

int64_t count_valid(const std::vector<int32_t>& tgt) {
  int64_t n = 0;
  for (int32_t t : tgt) n += (t >= 0);
  return n;
}

}  // namespace

// ----------------------------------------------------------------- DyckModel

template <typename T>
DyckModel<T>::DyckModel(const DyckModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.d_model % cfg_.n_heads != 0) {
    throw std::runtime_error("dyck_model: d_model not divisible by n_heads");
  }
  const int d = cfg_.d_model;
  tok_ = ps_.add("tok_emb", 2, {cfg_.vocab, d, 1, 1}, true);
  pos_ = ps_.add("pos_emb", 2, {cfg_.max_len, d, 1, 1}, true);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    Blk b;
    b.ln1g = ps_.add(p + "ln1.g", 1, {d, 1, 1, 1}, false);
    b.ln1b = ps_.add(p + "ln1.b", 1, {d, 1, 1, 1}, false);
    b.wq = ps_.add(p + "attn.wq", 2, {d, d, 1, 1}, true);
    b.wk = ps_.add(p + "attn.wk", 2, {d, d, 1, 1}, true);
    b.wv = ps_.add(p + "attn.wv", 2, {d, d, 1, 1}, true);
    b.wo = ps_.add(p + "attn.wo", 2, {d, d, 1, 1}, true);
    b.ln2g = ps_.add(p + "ln2.g", 1, {d, 1, 1, 1}, false);
    b.ln2b = ps_.add(p + "ln2.b", 1, {d, 1, 1, 1}, false);
    b.up = ps_.add(p + "mlp.w_up", 2, {d, cfg_.d_ff, 1, 1}, true);
    b.down = ps_.add(p + "mlp.w_down", 2, {cfg_.d_ff, d, 1, 1}, true);
    blocks_.push_back(b);
  }
  flng_ = ps_.add("final_ln.g", 1, {d, 1, 1, 1}, false);
  flnb_ = ps_.add("final_ln.b", 1, {d, 1, 1, 1}, false);
  head_ = ps_.add("head", 2, {d, cfg_.n_classes, 1, 1}, true);
}

template <typename T>
std::vector<T> DyckModel<T>::init(uint64_t seed) const {
  std::vector<T> theta(size_t(ps_.total()));
  Rng rng = named_stream(seed, "init");
  const double bound = 1.0 / std::sqrt(double(cfg_.d_model));
  for (const ParamInfo& p : ps_.infos()) {
    T* w = theta.data() + p.off;
    if (p.name.ends_with(".g")) {
      std::fill(w, w + p.n, T(1));
    } else if (p.name.ends_with(".b")) {
      std::fill(w, w + p.n, T(0));
    } else {
      for (int64_t i = 0; i < p.n; ++i) {
        w[i] = T(rng.next_uniform(-bound, bound));
      }
    }
  }
  return theta;
}

template <typename T>
std::vector<std::string> DyckModel<T>::default_snapshot_matrices() const {
  std::vector<std::string> out;
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    for (const char* s : {"attn.wq", "attn.wk", "attn.wv", "attn.wo",
                          "mlp.w_up", "mlp.w_down"}) {
      out.push_back(p + s);
    }
  }
  return out;
}

template <typename T>
typename DyckModel<T>::Built DyckModel<T>::build(Tape<T>& tape, const T* theta,
                                                 const Batch& batch,
                                                 bool with_loss,
                                                 std::vector<int>* leaf_ids) {
  if (batch.t_in != batch.t_out) {
    throw std::runtime_error("dyck_model: input/target length mismatch");
  }
  if (batch.t_in > cfg_.max_len) {
    throw std::runtime_error("dyck_model: sequence length " +
                             std::to_string(batch.t_in) + " exceeds max_len " +
                             std::to_string(cfg_.max_len));
  }
  tape.reset();
  std::vector<int> ids = bind_params(tape, ps_, theta);
  const int B = batch.n, Tt = batch.t_in, d = cfg_.d_model;
  int x = tape.embed(ids[size_t(tok_)], batch.in.data(), int64_t(B) * Tt);
  int x3 = tape.add_pos(tape.alias(x, 3, {B, Tt, d, 1}), ids[size_t(pos_)]);
  int x2 = tape.alias(x3, 2, {B * Tt, d, 1, 1});
  std::vector<T> cm = causal_mask<T>(Tt);
  int mask = tape.leaf(2, {Tt, Tt, 1, 1}, cm.data(), false);
  const T eps = T(kLnEps);
  for (const Blk& L : blocks_) {
    int h = tape.layernorm(x2, ids[size_t(L.ln1g)], ids[size_t(L.ln1b)], eps);
    int a = attention(tape, h, h, ids[size_t(L.wq)], ids[size_t(L.wk)],
                      ids[size_t(L.wv)], ids[size_t(L.wo)], B, Tt, Tt,
                      cfg_.n_heads, mask, true);
    x2 = tape.add(x2, a);
    int h2 = tape.layernorm(x2, ids[size_t(L.ln2g)], ids[size_t(L.ln2b)], eps);
    x2 = tape.add(x2, mlp(tape, h2, ids[size_t(L.up)], ids[size_t(L.down)]));
  }
  x2 = tape.layernorm(x2, ids[size_t(flng_)], ids[size_t(flnb_)], eps);
  Built out;
  out.logits = tape.matmul(x2, ids[size_t(head_)]);
  if (with_loss) {
    out.loss =
        tape.cross_entropy(out.logits, batch.tgt.data(), int64_t(B) * Tt, -1);
  }
  if (leaf_ids) *leaf_ids = std::move(ids);
  return out;
}

template <typename T>
double DyckModel<T>::loss_and_grad(const T* theta, const Batch& batch,
                                   T* grad) {
  std::vector<int> ids;
  Built g = build(tape_, theta, batch, true, &ids);
  const double loss = double(tape_.val(g.loss)[0]);
  tape_.backward(g.loss);
  for (int i = 0; i < ps_.count(); ++i) {
    const ParamInfo& p = ps_.info(i);
    std::memcpy(grad + p.off, tape_.grad(ids[size_t(i)]),
                size_t(p.n) * sizeof(T));
  }
  return loss;
}

template <typename T>
double DyckModel<T>::loss_only(const T* theta, const Batch& batch) {
  Built g = build(eval_tape_, theta, batch, true, nullptr);
  return double(eval_tape_.val(g.loss)[0]);
}

template <typename T>
EvalResult DyckModel<T>::evaluate(const T* theta,
                                  const std::vector<DyckExample>& pool,
                                  int chunk) {
  EvalResult r;
  int64_t correct = 0, total = 0;
  double loss_sum = 0;
  for (size_t start = 0; start < pool.size(); start += size_t(chunk)) {
    const size_t end = std::min(pool.size(), start + size_t(chunk));
    std::vector<int64_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), int64_t(start));
    Batch b = make_dyck_batch(pool, idx);
    Built g = build(eval_tape_, theta, b, true, nullptr);
    const T* lg = eval_tape_.val(g.logits);
    const int64_t rows = int64_t(b.n) * b.t_out;
    int64_t valid = 0;
    for (int64_t rix = 0; rix < rows; ++rix) {
      const int32_t t = b.tgt[size_t(rix)];
      if (t < 0) continue;
      const T* row = lg + rix * cfg_.n_classes;
      int best = 0;
      for (int c = 1; c < cfg_.n_classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      correct += (best == t);
      ++valid;
    }
    total += valid;
    loss_sum += double(eval_tape_.val(g.loss)[0]) * double(valid);
  }
  r.n_items = total;
  r.accuracy = total ? double(correct) / double(total) : 0.0;
  r.loss = total ? loss_sum / double(total) : 0.0;
  return r;
}

template <typename T>
std::vector<T> DyckModel<T>::logits(const T* theta, const Batch& batch) {
  Built g = build(eval_tape_, theta, batch, false, nullptr);
  const T* lg = eval_tape_.val(g.logits);
  return std::vector<T>(lg, lg + eval_tape_.numel(g.logits));
}

// ----------------------------------------------------------------- ScanModel

template <typename T>
ScanModel<T>::ScanModel(const ScanModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.d_model % cfg_.n_heads != 0) {
    throw std::runtime_error("scan_model: d_model not divisible by n_heads");
  }
  const int d = cfg_.d_model;
  etok_ = ps_.add("enc_tok_emb", 2, {cfg_.src_vocab, d, 1, 1}, true);
  epos_ = ps_.add("enc_pos_emb", 2, {cfg_.max_cmd, d, 1, 1}, true);
  dtok_ = ps_.add("dec_tok_emb", 2, {cfg_.src_vocab, d, 1, 1}, true);
  dpos_ = ps_.add("dec_pos_emb", 2, {cfg_.max_act, d, 1, 1}, true);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "enc" + std::to_string(i) + ".";
    EncBlk b;
    b.ln1g = ps_.add(p + "ln1.g", 1, {d, 1, 1, 1}, false);
    b.ln1b = ps_.add(p + "ln1.b", 1, {d, 1, 1, 1}, false);
    b.wq = ps_.add(p + "attn.wq", 2, {d, d, 1, 1}, true);
    b.wk = ps_.add(p + "attn.wk", 2, {d, d, 1, 1}, true);
    b.wv = ps_.add(p + "attn.wv", 2, {d, d, 1, 1}, true);
    b.wo = ps_.add(p + "attn.wo", 2, {d, d, 1, 1}, true);
    b.ln2g = ps_.add(p + "ln2.g", 1, {d, 1, 1, 1}, false);
    b.ln2b = ps_.add(p + "ln2.b", 1, {d, 1, 1, 1}, false);
    b.up = ps_.add(p + "mlp.w_up", 2, {d, cfg_.d_ff, 1, 1}, true);
    b.down = ps_.add(p + "mlp.w_down", 2, {cfg_.d_ff, d, 1, 1}, true);
    eblocks_.push_back(b);
  }
  elng_ = ps_.add("enc_ln.g", 1, {d, 1, 1, 1}, false);
  elnb_ = ps_.add("enc_ln.b", 1, {d, 1, 1, 1}, false);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "dec" + std::to_string(i) + ".";
    DecBlk b;
    b.ln1g = ps_.add(p + "ln1.g", 1, {d, 1, 1, 1}, false);
    b.ln1b = ps_.add(p + "ln1.b", 1, {d, 1, 1, 1}, false);
    b.swq = ps_.add(p + "self.wq", 2, {d, d, 1, 1}, true);
    b.swk = ps_.add(p + "self.wk", 2, {d, d, 1, 1}, true);
    b.swv = ps_.add(p + "self.wv", 2, {d, d, 1, 1}, true);
    b.swo = ps_.add(p + "self.wo", 2, {d, d, 1, 1}, true);
    b.ln2g = ps_.add(p + "ln2.g", 1, {d, 1, 1, 1}, false);
    b.ln2b = ps_.add(p + "ln2.b", 1, {d, 1, 1, 1}, false);
    b.cwq = ps_.add(p + "cross.wq", 2, {d, d, 1, 1}, true);
    b.cwk = ps_.add(p + "cross.wk", 2, {d, d, 1, 1}, true);
    b.cwv = ps_.add(p + "cross.wv", 2, {d, d, 1, 1}, true);
    b.cwo = ps_.add(p + "cross.wo", 2, {d, d, 1, 1}, true);
    b.ln3g = ps_.add(p + "ln3.g", 1, {d, 1, 1, 1}, false);
    b.ln3b = ps_.add(p + "ln3.b", 1, {d, 1, 1, 1}, false);
    b.up = ps_.add(p + "mlp.w_up", 2, {d, cfg_.d_ff, 1, 1}, true);
    b.down = ps_.add(p + "mlp.w_down", 2, {cfg_.d_ff, d, 1, 1}, true);
    dblocks_.push_back(b);
  }
  dlng_ = ps_.add("dec_ln.g", 1, {d, 1, 1, 1}, false);
  dlnb_ = ps_.add("dec_ln.b", 1, {d, 1, 1, 1}, false);
  head_ = ps_.add("head", 2, {d, cfg_.act_vocab, 1, 1}, true);
}

template <typename T>
std::vector<T> ScanModel<T>::init(uint64_t seed) const {
  std::vector<T> theta(size_t(ps_.total()));
  Rng rng = named_stream(seed, "init");
  const double bound = 1.0 / std::sqrt(double(cfg_.d_model));
  for (const ParamInfo& p : ps_.infos()) {
    T* w = theta.data() + p.off;
    if (p.name.ends_with(".g")) {
      std::fill(w, w + p.n, T(1));
    } else if (p.name.ends_with(".b")) {
      std::fill(w, w + p.n, T(0));
    } else {
      for (int64_t i = 0; i < p.n; ++i) {
        w[i] = T(rng.next_uniform(-bound, bound));
      }
    }
  }
  return theta;
}

template <typename T>
std::vector<std::string> ScanModel<T>::default_snapshot_matrices() const {
  const std::string p = "dec" + std::to_string(cfg_.n_layers - 1) + ".";
  std::vector<std::string> out;
  for (const char* s :
       {"self.wq", "self.wk", "self.wv", "self.wo", "cross.wq", "cross.wk",
        "cross.wv", "cross.wo", "mlp.w_up", "mlp.w_down"}) {
    out.push_back(p + s);
  }
  return out;
}

template <typename T>
int ScanModel<T>::encoder_graph(Tape<T>& tape, const std::vector<int>& ids,
                                const Batch& batch) {
  if (batch.t_in > cfg_.max_cmd) {
    throw std::runtime_error("scan_model: command length " +
                             std::to_string(batch.t_in) + " exceeds max_cmd " +
                             std::to_string(cfg_.max_cmd));
  }
  const int B = batch.n, S = batch.t_in, d = cfg_.d_model;
  int x = tape.embed(ids[size_t(etok_)], batch.in.data(), int64_t(B) * S);
  int x3 = tape.add_pos(tape.alias(x, 3, {B, S, d, 1}), ids[size_t(epos_)]);
  int x2 = tape.alias(x3, 2, {B * S, d, 1, 1});
  std::vector<T> km = length_mask<T>(batch.in_len, S);
  int mask = tape.leaf(2, {B, S, 1, 1}, km.data(), false);
  const T eps = T(kLnEps);
  for (const EncBlk& L : eblocks_) {
    int h = tape.layernorm(x2, ids[size_t(L.ln1g)], ids[size_t(L.ln1b)], eps);
    int a = attention(tape, h, h, ids[size_t(L.wq)], ids[size_t(L.wk)],
                      ids[size_t(L.wv)], ids[size_t(L.wo)], B, S, S,
                      cfg_.n_heads, mask, false);
    x2 = tape.add(x2, a);
    int h2 = tape.layernorm(x2, ids[size_t(L.ln2g)], ids[size_t(L.ln2b)], eps);
    x2 = tape.add(x2, mlp(tape, h2, ids[size_t(L.up)], ids[size_t(L.down)]));
  }
  return tape.layernorm(x2, ids[size_t(elng_)], ids[size_t(elnb_)], eps);
}

template <typename T>
typename ScanModel<T>::Built ScanModel<T>::decoder_graph(
    Tape<T>& tape, const std::vector<int>& ids, int enc_h, const Batch& batch,
    const int32_t* dec_in, int t_out, bool with_loss) {
  if (t_out > cfg_.max_act) {
    throw std::runtime_error("scan_model: action length " +
                             std::to_string(t_out) + " exceeds max_act " +
                             std::to_string(cfg_.max_act));
  }
  const int B = batch.n, S = batch.t_in, d = cfg_.d_model;
  int y = tape.embed(ids[size_t(dtok_)], dec_in, int64_t(B) * t_out);
  int y3 = tape.add_pos(tape.alias(y, 3, {B, t_out, d, 1}), ids[size_t(dpos_)]);
  int y2 = tape.alias(y3, 2, {B * t_out, d, 1, 1});
  std::vector<T> cm = causal_mask<T>(t_out);
  int causal = tape.leaf(2, {t_out, t_out, 1, 1}, cm.data(), false);
  std::vector<T> km = length_mask<T>(batch.in_len, S);
  int kmask = tape.leaf(2, {B, S, 1, 1}, km.data(), false);
  const T eps = T(kLnEps);
  for (const DecBlk& L : dblocks_) {
    int h = tape.layernorm(y2, ids[size_t(L.ln1g)], ids[size_t(L.ln1b)], eps);
    int a = attention(tape, h, h, ids[size_t(L.swq)], ids[size_t(L.swk)],
                      ids[size_t(L.swv)], ids[size_t(L.swo)], B, t_out, t_out,
                      cfg_.n_heads, causal, true);
    y2 = tape.add(y2, a);
    int h2 = tape.layernorm(y2, ids[size_t(L.ln2g)], ids[size_t(L.ln2b)], eps);
    int c = attention(tape, h2, enc_h, ids[size_t(L.cwq)], ids[size_t(L.cwk)],
                      ids[size_t(L.cwv)], ids[size_t(L.cwo)], B, t_out, S,
                      cfg_.n_heads, kmask, false);
    y2 = tape.add(y2, c);
    int h3 = tape.layernorm(y2, ids[size_t(L.ln3g)], ids[size_t(L.ln3b)], eps);
    y2 = tape.add(y2, mlp(tape, h3, ids[size_t(L.up)], ids[size_t(L.down)]));
  }
  y2 = tape.layernorm(y2, ids[size_t(dlng_)], ids[size_t(dlnb_)], eps);
  Built out;
  out.logits = tape.matmul(y2, ids[size_t(head_)]);
  if (with_loss) {
    out.loss = tape.cross_entropy(out.logits, batch.tgt.data(),
                                  int64_t(B) * t_out, -1);
  }
  return out;
}

template <typename T>
double ScanModel<T>::loss_and_grad(const T* theta, const Batch& batch,
                                   T* grad) {
  tape_.reset();
  std::vector<int> ids = bind_params(tape_, ps_, theta);
  int enc = encoder_graph(tape_, ids, batch);
  Built g = decoder_graph(tape_, ids, enc, batch, batch.dec_in.data(),
                          batch.t_out, true);
  const double loss = double(tape_.val(g.loss)[0]);
  tape_.backward(g.loss);
  for (int i = 0; i < ps_.count(); ++i) {
    const ParamInfo& p = ps_.info(i);
    std::memcpy(grad + p.off, tape_.grad(ids[size_t(i)]),
                size_t(p.n) * sizeof(T));
  }
  return loss;
}

template <typename T>
double ScanModel<T>::loss_only(const T* theta, const Batch& batch) {
  eval_tape_.reset();
  std::vector<int> ids = bind_params(eval_tape_, ps_, theta);
  int enc = encoder_graph(eval_tape_, ids, batch);
  Built g = decoder_graph(eval_tape_, ids, enc, batch, batch.dec_in.data(),
                          batch.t_out, true);
  return double(eval_tape_.val(g.loss)[0]);
}

template <typename T>
std::vector<std::vector<int32_t>> ScanModel<T>::decode(const T* theta,
                                                       const Batch& batch,
                                                       const ScanVocab& vocab) {
  const int B = batch.n, S = batch.t_in, d = cfg_.d_model;
  eval_tape_.reset();
  std::vector<int> ids = bind_params(eval_tape_, ps_, theta);
  int ench = encoder_graph(eval_tape_, ids, batch);
  const T* ep = eval_tape_.val(ench);
  std::vector<T> enc_host(ep, ep + int64_t(B) * S * d);

  const int cap = cfg_.max_act;
  std::vector<std::vector<int32_t>> out;
  out.resize(size_t(B));
  std::vector<int32_t> dec(size_t(B) * size_t(cap), vocab.pad);
  for (int b = 0; b < B; ++b) dec[size_t(b) * size_t(cap)] = vocab.eos;
  std::vector<char> done(size_t(B), 0);
  std::vector<int32_t> step_in;
  for (int L = 1; L <= cap; ++L) {
    step_in.resize(size_t(B) * size_t(L));
    for (int b = 0; b < B; ++b) {
      std::memcpy(step_in.data() + size_t(b) * size_t(L),
                  dec.data() + size_t(b) * size_t(cap),
                  size_t(L) * sizeof(int32_t));
    }
    eval_tape_.reset();
    ids = bind_params(eval_tape_, ps_, theta);
    int eh = eval_tape_.leaf(2, {B * S, d, 1, 1}, enc_host.data(), false);
    Built g =
        decoder_graph(eval_tape_, ids, eh, batch, step_in.data(), L, false);
    const T* lg = eval_tape_.val(g.logits);
    bool all_done = true;
    for (int b = 0; b < B; ++b) {
      if (done[size_t(b)]) continue;
      const T* row = lg + (int64_t(b) * L + (L - 1)) * cfg_.act_vocab;
      int best = 0;
      for (int c = 1; c < cfg_.act_vocab; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == vocab.act_eos) {
        done[size_t(b)] = 1;
      } else {
        out[size_t(b)].push_back(best);
        if (L < cap) {
          dec[size_t(b) * size_t(cap) + size_t(L)] =
              vocab.act_to_src[size_t(best)];
        }
        if (int(out[size_t(b)].size()) >= cap) done[size_t(b)] = 1;
      }
      all_done = all_done && done[size_t(b)] != 0;
    }
    if (all_done) break;
  }
  return out;
}

template <typename T>
EvalResult ScanModel<T>::evaluate(const T* theta,
                                  const std::vector<ScanExample>& pool,
                                  const ScanVocab& vocab, int chunk) {
  EvalResult r;
  int64_t match = 0;
  int64_t tok_total = 0;
  double loss_sum = 0;
  for (size_t start = 0; start < pool.size(); start += size_t(chunk)) {
    const size_t end = std::min(pool.size(), start + size_t(chunk));
    std::vector<int64_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), int64_t(start));
    Batch b = make_scan_batch(pool, idx, vocab);
    auto seqs = decode(theta, b, vocab);
    for (size_t i = 0; i < seqs.size(); ++i) {
      if (seqs[i] == pool[start + i].act) ++match;
    }
    const int64_t valid = count_valid(b.tgt);
    loss_sum += loss_only(theta, b) * double(valid);
    tok_total += valid;
  }
  r.n_items = int64_t(pool.size());
  r.accuracy = pool.empty() ? 0.0 : double(match) / double(pool.size());
  r.loss = tok_total ? loss_sum / double(tok_total) : 0.0;
  return r;
}

template class DyckModel<float>;
template class DyckModel<double>;
template class ScanModel<float>;
template class ScanModel<double>;

}  // namespace gk
