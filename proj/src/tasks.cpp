#include "tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gk {

// ------------------------------------------------------------------- Dyck-1

namespace {

// counts[pos][d] = number of ways to extend a prefix at depth d after `pos`
// tokens into a balanced sequence of total length L (depth never negative).
std::vector<std::vector<uint64_t>> ballot_counts(int len) {
  const int maxd = len / 2;
  std::vector<std::vector<uint64_t>> c(size_t(len + 1),
                                       std::vector<uint64_t>(size_t(maxd + 2), 0));
  c[size_t(len)][0] = 1;
  for (int pos = len - 1; pos >= 0; --pos) {
    for (int d = 0; d <= maxd; ++d) {
      uint64_t ways = 0;
      if (d + 1 <= maxd) ways += c[size_t(pos + 1)][size_t(d + 1)];
      if (d > 0) ways += c[size_t(pos + 1)][size_t(d - 1)];
      c[size_t(pos)][size_t(d)] = ways;
    }
  }
  return c;
}

DyckExample unrank_dyck(uint64_t rank, int len,
                        const std::vector<std::vector<uint64_t>>& c) {
  const int maxd = len / 2;
  DyckExample ex;
  ex.tokens.reserve(size_t(len));
  ex.depths.reserve(size_t(len));
  int d = 0;
  for (int pos = 0; pos < len; ++pos) {
    uint64_t open_ways =
        (d + 1 <= maxd) ? c[size_t(pos + 1)][size_t(d + 1)] : 0;
    if (rank < open_ways) {
      ex.tokens.push_back(1);  // '('
      ++d;
    } else {
      rank -= open_ways;
      ex.tokens.push_back(2);  // ')'
      --d;
    }
    ex.depths.push_back(d);
  }
  if (d != 0) throw std::runtime_error("unrank_dyck: unbalanced result");
  return ex;
}

}  // namespace

uint64_t dyck_count(int seq_len) {
  if (seq_len <= 0 || seq_len % 2 != 0) {
    throw std::runtime_error("dyck_count: length must be positive and even");
  }
  return ballot_counts(seq_len)[0][0];
}

DyckData generate_dyck(const DyckConfig& cfg) {
  if (cfg.seq_len % 2 != 0) {
    throw std::runtime_error("generate_dyck: sequence length must be even");
  }
  if (cfg.max_depth != cfg.seq_len / 2) {
    throw std::runtime_error(
        "generate_dyck: max depth must equal seq_len/2 (automatic bound)");
  }
  auto counts = ballot_counts(cfg.seq_len);
  const uint64_t universe = counts[0][0];
  const int64_t need = int64_t(cfg.n_train) + cfg.n_test;
  if (uint64_t(need) > universe) {
    throw std::runtime_error(
        "generate_dyck: not enough distinct sequences for the requested sizes");
  }
  Rng rng = named_stream(cfg.gen_seed, "dyck_gen");
  std::vector<int64_t> ranks = sample_distinct(int64_t(universe), need, rng);
  DyckData out;
  out.seq_len = cfg.seq_len;
  out.n_classes = cfg.max_depth + 1;
  out.train.reserve(size_t(cfg.n_train));
  out.test.reserve(size_t(cfg.n_test));
  for (int64_t i = 0; i < need; ++i) {
    DyckExample ex = unrank_dyck(uint64_t(ranks[size_t(i)]), cfg.seq_len, counts);
    (i < cfg.n_train ? out.train : out.test).push_back(std::move(ex));
  }
  return out;
}

// --------------------------------------------------------------------- SCAN

namespace {

using TokSeq = std::vector<std::string>;
using GrammarItem = std::pair<TokSeq, TokSeq>;

TokSeq turn_act(const std::string& dir) {
  return {dir == "left" ? "I_TURN_LEFT" : "I_TURN_RIGHT"};
}

TokSeq prim_act(const std::string& u) {
  std::string up = u;
  for (char& ch : up) ch = char(::toupper(static_cast<unsigned char>(ch)));
  return {"I_" + up};
}

TokSeq cat(const TokSeq& a, const TokSeq& b) {
  TokSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

TokSeq rep(const TokSeq& a, int k) {
  TokSeq out;
  for (int i = 0; i < k; ++i) out.insert(out.end(), a.begin(), a.end());
  return out;
}

}  // namespace

std::vector<GrammarItem> scan_grammar() {
  const TokSeq prims = {"walk", "look", "run", "jump"};
  const TokSeq dirs = {"left", "right"};

  std::vector<GrammarItem> d_rules;
  for (const auto& u : prims) {
    for (const auto& dir : dirs) {
      d_rules.push_back({{u, dir}, cat(turn_act(dir), prim_act(u))});
    }
  }
  for (const auto& dir : dirs) {
    d_rules.push_back({{"turn", dir}, turn_act(dir)});
  }

  std::vector<GrammarItem> v_rules = d_rules;
  for (const auto& u : prims) v_rules.push_back({{u}, prim_act(u)});
  TokSeq verbs = prims;
  verbs.push_back("turn");
  for (const auto& x : verbs) {
    for (const auto& dir : dirs) {
      TokSeq base = x == "turn" ? turn_act(dir) : cat(turn_act(dir), prim_act(x));
      v_rules.push_back({{x, "opposite", dir}, cat(turn_act(dir), base)});
      v_rules.push_back({{x, "around", dir}, rep(base, 4)});
    }
  }

  std::vector<GrammarItem> s_rules = v_rules;
  for (const auto& [c, a] : v_rules) {
    s_rules.push_back({cat(c, {"twice"}), rep(a, 2)});
    s_rules.push_back({cat(c, {"thrice"}), rep(a, 3)});
  }

  std::vector<GrammarItem> c_rules = s_rules;
  for (const auto& [c1, a1] : s_rules) {
    for (const auto& [c2, a2] : s_rules) {
      c_rules.push_back({cat(cat(c1, {"and"}), c2), cat(a1, a2)});
      c_rules.push_back({cat(cat(c1, {"after"}), c2), cat(a2, a1)});
    }
  }
  return c_rules;
}

int64_t write_scan_dataset(const std::string& path, int max_cmd, int max_act) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_scan_dataset: cannot open " + path);
  }
  int64_t n = 0;
  for (const auto& [cmd, act] : scan_grammar()) {
    if (int(cmd.size()) > max_cmd || int(act.size()) > max_act) continue;
    out << "IN:";
    for (const auto& t : cmd) out << ' ' << t;
    out << " OUT:";
    for (const auto& t : act) out << ' ' << t;
    out << '\n';
    ++n;
  }
  if (!out) throw std::runtime_error("write_scan_dataset: write failed");
  return n;
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

ScanData load_scan(const ScanConfig& cfg) {
  std::ifstream in(cfg.path);
  if (!in) {
    throw std::runtime_error("load_scan: missing dataset file: " + cfg.path);
  }
  std::vector<std::pair<TokSeq, TokSeq>> raw;
  std::set<std::string> cmd_strings;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("IN:", 0) != 0) {
      throw std::runtime_error("load_scan: line " + std::to_string(line_no) +
                               ": expected leading 'IN:'");
    }
    size_t sep = line.find(" OUT:");
    size_t cmd_begin = 3;
    std::string cmd_part, act_part;
    if (sep == std::string::npos) {
      // tolerate the degenerate empty-command spelling "IN: OUT: ..."
      if (line.rfind("IN: OUT:", 0) == 0) {
        cmd_part = "";
        act_part = line.substr(8);
      } else {
        throw std::runtime_error("load_scan: line " + std::to_string(line_no) +
                                 ": missing ' OUT:' separator");
      }
    } else {
      cmd_part = line.substr(cmd_begin, sep - cmd_begin);
      act_part = line.substr(sep + 5);
    }
    TokSeq cmd = split_ws(cmd_part);
    TokSeq act = split_ws(act_part);
    if (int(cmd.size()) > cfg.max_cmd) {
      throw std::runtime_error("load_scan: line " + std::to_string(line_no) +
                               ": command longer than max " +
                               std::to_string(cfg.max_cmd));
    }
    if (int(act.size()) > cfg.max_act) {
      throw std::runtime_error("load_scan: line " + std::to_string(line_no) +
                               ": action sequence longer than max " +
                               std::to_string(cfg.max_act));
    }
    std::string joined;
    for (const auto& t : cmd) joined += t + ' ';
    cmd_strings.insert(joined);
    raw.push_back({std::move(cmd), std::move(act)});
  }
  if (int64_t(raw.size()) < cfg.n_train) {
    throw std::runtime_error("load_scan: dataset smaller than n_train");
  }

  ScanData data;
  data.max_cmd = cfg.max_cmd;
  data.max_act = cfg.max_act;
  data.total = int64_t(raw.size());

  // Vocabulary: specials first, then every distinct token of both streams.
  std::set<std::string> words, act_words;
  for (const auto& [cmd, act] : raw) {
    words.insert(cmd.begin(), cmd.end());
    words.insert(act.begin(), act.end());
    act_words.insert(act.begin(), act.end());
  }
  ScanVocab& v = data.vocab;
  v.src = {"<pad>", "<eos>"};
  for (const auto& w : words) v.src.push_back(w);
  for (size_t i = 0; i < v.src.size(); ++i) v.src_id[v.src[i]] = int(i);
  for (const auto& w : act_words) v.act.push_back(w);
  v.act.push_back("<eos>");
  v.act_eos = int(v.act.size()) - 1;
  for (size_t i = 0; i < v.act.size(); ++i) v.act_id[v.act[i]] = int(i);
  v.act_to_src.resize(v.act.size());
  for (size_t i = 0; i + 1 < v.act.size(); ++i) {
    v.act_to_src[i] = int32_t(v.src_id.at(v.act[i]));
  }
  v.act_to_src[size_t(v.act_eos)] = int32_t(v.eos);

  std::vector<ScanExample> all;
  all.reserve(raw.size());
  for (const auto& [cmd, act] : raw) {
    ScanExample ex;
    for (const auto& t : cmd) ex.cmd.push_back(int32_t(v.src_id.at(t)));
    for (const auto& t : act) ex.act.push_back(int32_t(v.act_id.at(t)));
    all.push_back(std::move(ex));
  }

  // Fixed split: sample n_train indices from the data-seed stream, remainder
  // (in file order) becomes the test set.
  Rng rng = named_stream(cfg.data_seed, "scan_split");
  std::vector<int64_t> pick =
      sample_distinct(int64_t(all.size()), cfg.n_train, rng);
  std::vector<char> is_train(all.size(), 0);
  for (int64_t i : pick) is_train[size_t(i)] = 1;
  for (size_t i = 0; i < all.size(); ++i) {
    (is_train[i] ? data.train : data.test).push_back(std::move(all[i]));
  }
  return data;
}

// ------------------------------------------------------------------ batches

Batch make_dyck_batch(const std::vector<DyckExample>& pool,
                      const std::vector<int64_t>& idx) {
  Batch b;
  b.n = int(idx.size());
  if (b.n == 0) throw std::runtime_error("make_dyck_batch: empty index list");
  b.t_in = int(pool[size_t(idx[0])].tokens.size());
  b.t_out = b.t_in;
  b.in.resize(size_t(b.n) * b.t_in);
  b.tgt.resize(size_t(b.n) * b.t_out);
  for (int i = 0; i < b.n; ++i) {
    const DyckExample& ex = pool[size_t(idx[size_t(i)])];
    if (int(ex.tokens.size()) != b.t_in) {
      throw std::runtime_error("make_dyck_batch: ragged sequence lengths");
    }
    std::copy(ex.tokens.begin(), ex.tokens.end(),
              b.in.begin() + int64_t(i) * b.t_in);
    std::copy(ex.depths.begin(), ex.depths.end(),
              b.tgt.begin() + int64_t(i) * b.t_out);
  }
  return b;
}

Batch make_scan_batch(const std::vector<ScanExample>& pool,
                      const std::vector<int64_t>& idx, const ScanVocab& vocab) {
  Batch b;
  b.n = int(idx.size());
  if (b.n == 0) throw std::runtime_error("make_scan_batch: empty index list");
  int max_cmd = 0, max_act = 0;
  for (int64_t i : idx) {
    max_cmd = std::max(max_cmd, int(pool[size_t(i)].cmd.size()));
    max_act = std::max(max_act, int(pool[size_t(i)].act.size()));
  }
  b.t_in = max_cmd + 1;   // + eos
  b.t_out = max_act + 1;  // + eos
  b.in.assign(size_t(b.n) * b.t_in, int32_t(vocab.pad));
  b.dec_in.assign(size_t(b.n) * b.t_out, int32_t(vocab.pad));
  b.tgt.assign(size_t(b.n) * b.t_out, -1);
  b.in_len.resize(size_t(b.n));
  for (int i = 0; i < b.n; ++i) {
    const ScanExample& ex = pool[size_t(idx[size_t(i)])];
    int32_t* in_row = b.in.data() + int64_t(i) * b.t_in;
    for (size_t k = 0; k < ex.cmd.size(); ++k) in_row[k] = ex.cmd[k];
    in_row[ex.cmd.size()] = int32_t(vocab.eos);
    b.in_len[size_t(i)] = int32_t(ex.cmd.size()) + 1;

    int32_t* dec_row = b.dec_in.data() + int64_t(i) * b.t_out;
    int32_t* tgt_row = b.tgt.data() + int64_t(i) * b.t_out;
    dec_row[0] = int32_t(vocab.eos);  // start token
    for (size_t k = 0; k < ex.act.size(); ++k) {
      if (k + 1 < size_t(b.t_out)) {
        dec_row[k + 1] = vocab.act_to_src[size_t(ex.act[k])];
      }
      tgt_row[k] = ex.act[k];
    }
    tgt_row[ex.act.size()] = int32_t(vocab.act_eos);
  }
  return b;
}

BatchStream::BatchStream(int64_t n_examples, int batch_size, Rng rng)
    : n_(n_examples), batch_(batch_size), rng_(rng) {
  if (batch_size < 1) throw std::runtime_error("BatchStream: batch size >= 1");
  perm_.resize(size_t(n_));
  for (int64_t i = 0; i < n_; ++i) perm_[size_t(i)] = i;
  shuffle(perm_, rng_);
}

std::vector<int64_t> BatchStream::next_indices() {
  if (pos_ >= n_) {
    ++epoch_;
    pos_ = 0;
    shuffle(perm_, rng_);
  }
  int64_t end = std::min(n_, pos_ + batch_);
  std::vector<int64_t> out(perm_.begin() + pos_, perm_.begin() + end);
  pos_ = end;
  return out;
}

void BatchStream::restore(uint64_t rng_state, int64_t epoch, int64_t pos,
                          std::vector<int64_t> perm) {
  if (int64_t(perm.size()) != n_) {
    throw std::runtime_error("BatchStream::restore: permutation size mismatch");
  }
  rng_.state = rng_state;
  epoch_ = epoch;
  pos_ = pos;
  perm_ = std::move(perm);
}

}  // namespace gk
