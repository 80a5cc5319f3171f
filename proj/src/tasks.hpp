#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"

namespace gk {

// ------------------------------------------------------------------- Dyck-1

struct DyckConfig {
  int seq_len = 24;
  int max_depth = 12;
  int n_train = 50;
  int n_test = 5000;
  uint64_t gen_seed = 0;
};

// Token ids: pad=0, '('=1, ')'=2. Labels are the nesting depth AFTER consuming
// the token at each position, giving classes 0..max_depth (13 for length 24).
struct DyckExample {
  std::vector<int32_t> tokens;
  std::vector<int32_t> depths;
};

struct DyckData {
  std::vector<DyckExample> train, test;
  int seq_len = 0;
  int n_classes = 0;
};

// Number of balanced sequences of the given (even) length; 208,012 at 24.
uint64_t dyck_count(int seq_len);

// Uniform sample without replacement over all balanced sequences: distinct
// ranks are drawn first, then each rank is mapped to its sequence through the
// ballot-count table (no rejection in the mapping).
DyckData generate_dyck(const DyckConfig& cfg);

// --------------------------------------------------------------------- SCAN

struct ScanConfig {
  std::string path;
  int n_train = 2048;
  uint64_t data_seed = 0;
  int max_cmd = 8;  // command tokens, excluding the boundary token
  int max_act = 13;
};

// Joint source vocabulary (pad, eos, then every distinct token of both
// streams, sorted): both the encoder input and the teacher-forced decoder
// input index into it, with eos doubling as the decoder start token. The
// action space used by the output head is the distinct action tokens plus eos.
struct ScanVocab {
  std::vector<std::string> src;           // id -> token
  std::vector<std::string> act;           // class -> token (actions..., eos)
  std::unordered_map<std::string, int> src_id;
  std::unordered_map<std::string, int> act_id;
  std::vector<int32_t> act_to_src;        // action class -> joint source id
  int pad = 0;
  int eos = 1;
  int act_eos = 0;  // class id of eos in the action space (set by loader)
};

struct ScanExample {
  std::vector<int32_t> cmd;  // joint source ids, no boundary
  std::vector<int32_t> act;  // action class ids, no boundary
};

struct ScanData {
  ScanVocab vocab;
  std::vector<ScanExample> train, test;
  int max_cmd = 0;  // config maxima (excluding boundary), echoed for the model
  int max_act = 0;
  int64_t total = 0;
};

// Writes the full command grammar, filtered to cmd<=max_cmd && act<=max_act,
// in "IN: <command> OUT: <actions>" line format. Returns the number of lines.
int64_t write_scan_dataset(const std::string& path, int max_cmd = 8,
                           int max_act = 13);

// Enumerates the unfiltered grammar as (command, actions) token lines; used by
// the generator and by tests that cross-check counts.
std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>
scan_grammar();

ScanData load_scan(const ScanConfig& cfg);

// ------------------------------------------------------------------ batches

struct Batch {
  int n = 0;
  int t_in = 0;
  int t_out = 0;
  std::vector<int32_t> in;      // [n * t_in]
  std::vector<int32_t> dec_in;  // [n * t_out] (SCAN only)
  std::vector<int32_t> tgt;     // [n * t_out], ignore marked with -1
  std::vector<int32_t> in_len;  // [n] valid encoder length incl. eos (SCAN)
};

Batch make_dyck_batch(const std::vector<DyckExample>& pool,
                      const std::vector<int64_t>& idx);
Batch make_scan_batch(const std::vector<ScanExample>& pool,
                      const std::vector<int64_t>& idx, const ScanVocab& vocab);

// Deterministic epoch stream: reshuffles the index permutation at each epoch
// boundary from its own Rng; every example appears exactly once per epoch.
class BatchStream {
 public:
  BatchStream(int64_t n_examples, int batch_size, Rng rng);

  std::vector<int64_t> next_indices();

  // checkpointable state
  uint64_t rng_state() const { return rng_.state; }
  int64_t epoch() const { return epoch_; }
  int64_t pos() const { return pos_; }
  const std::vector<int64_t>& perm() const { return perm_; }
  void restore(uint64_t rng_state, int64_t epoch, int64_t pos,
               std::vector<int64_t> perm);

 private:
  int64_t n_;
  int batch_;
  Rng rng_;
  std::vector<int64_t> perm_;
  int64_t pos_ = 0;
  int64_t epoch_ = 0;
};

}  // namespace gk
