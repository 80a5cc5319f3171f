#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tasks.hpp"

namespace {

using namespace gk;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Independent depth oracle: walk the token stream with a counter.
std::vector<int32_t> stack_depths(const std::vector<int32_t>& tokens) {
  std::vector<int32_t> out;
  int d = 0;
  for (int32_t t : tokens) {
    if (t == 1) {
      ++d;
    } else if (t == 2) {
      --d;
    } else {
      d = -1000;  // pad or junk must not appear
    }
    out.push_back(d);
  }
  return out;
}

std::string tokens_to_string(const std::vector<int32_t>& tokens) {
  std::string s;
  for (int32_t t : tokens) s += (t == 1 ? '(' : t == 2 ? ')' : '?');
  return s;
}

}  // namespace

TEST_SUITE("tasks") {

TEST_CASE("dyck_count matches the ballot recursion") {
  CHECK(dyck_count(2) == 1);
  CHECK(dyck_count(4) == 2);
  CHECK(dyck_count(6) == 5);
  CHECK(dyck_count(8) == 14);
  CHECK(dyck_count(10) == 42);
  CHECK(dyck_count(24) == 208012);
  CHECK_THROWS(dyck_count(7));
  CHECK_THROWS(dyck_count(0));
}

TEST_CASE("dyck depth label convention on the shortest sequences") {
  DyckConfig tiny;
  tiny.seq_len = 2;
  tiny.max_depth = 1;
  tiny.n_train = 1;
  tiny.n_test = 0;
  DyckData d = generate_dyck(tiny);
  REQUIRE(d.train.size() == 1);
  CHECK(d.train[0].tokens == std::vector<int32_t>{1, 2});
  CHECK(d.train[0].depths == std::vector<int32_t>{1, 0});

  DyckConfig four;
  four.seq_len = 4;
  four.max_depth = 2;
  four.n_train = 2;
  four.n_test = 0;
  DyckData d4 = generate_dyck(four);
  REQUIRE(d4.train.size() == 2);
  std::map<std::string, std::vector<int32_t>> got;
  for (const auto& ex : d4.train) got[tokens_to_string(ex.tokens)] = ex.depths;
  REQUIRE(got.count("(())") == 1);
  REQUIRE(got.count("()()") == 1);
  CHECK(got["(())"] == std::vector<int32_t>{1, 2, 1, 0});
  CHECK(got["()()"] == std::vector<int32_t>{1, 0, 1, 0});
}

TEST_CASE("generated dyck data passes a brute-force checker") {
  DyckConfig cfg;  // defaults: 24 / depth 12 / 50 train / 5000 test
  DyckData d = generate_dyck(cfg);
  CHECK(d.seq_len == 24);
  CHECK(d.n_classes == 13);
  REQUIRE(d.train.size() == 50);
  REQUIRE(d.test.size() == 5000);

  std::set<std::string> seen;
  auto check_pool = [&](const std::vector<DyckExample>& pool) {
    for (const auto& ex : pool) {
      REQUIRE(ex.tokens.size() == 24);
      REQUIRE(ex.depths.size() == 24);
      std::vector<int32_t> oracle = stack_depths(ex.tokens);
      CHECK(ex.depths == oracle);
      int32_t lo = *std::min_element(oracle.begin(), oracle.end());
      int32_t hi = *std::max_element(oracle.begin(), oracle.end());
      CHECK(lo >= 0);
      CHECK(hi <= 12);
      CHECK(oracle.back() == 0);
      seen.insert(tokens_to_string(ex.tokens));
    }
  };
  check_pool(d.train);
  check_pool(d.test);
  // Sampling without replacement: every sequence distinct across both splits.
  CHECK(seen.size() == 5050);
}

TEST_CASE("dyck generation is deterministic in the seed") {
  DyckConfig cfg;
  cfg.n_test = 200;
  DyckData a = generate_dyck(cfg);
  DyckData b = generate_dyck(cfg);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].tokens == b.train[i].tokens);
    CHECK(a.train[i].depths == b.train[i].depths);
  }
  for (size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].tokens == b.test[i].tokens);
  }

  cfg.gen_seed = 7;
  DyckData c = generate_dyck(cfg);
  bool differs = false;
  for (size_t i = 0; i < a.train.size() && !differs; ++i) {
    differs = a.train[i].tokens != c.train[i].tokens;
  }
  CHECK(differs);
}

TEST_CASE("dyck generation rejects bad configs") {
  DyckConfig odd;
  odd.seq_len = 23;
  CHECK_THROWS(generate_dyck(odd));

  DyckConfig too_many;
  too_many.seq_len = 4;  // only 2 sequences exist
  too_many.n_train = 2;
  too_many.n_test = 1;
  CHECK_THROWS(generate_dyck(too_many));
}

TEST_CASE("scan dataset file has the expected shape") {
  std::string path = temp_path("gk_test_scan.txt");
  int64_t n = write_scan_dataset(path);
  CHECK(n == 11934);
  CHECK(scan_grammar().size() == 20910);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int64_t lines = 0;
  bool saw_jump = false;
  while (std::getline(in, line)) {
    ++lines;
    REQUIRE(line.rfind("IN: ", 0) == 0);
    size_t out_pos = line.find(" OUT: ");
    REQUIRE(out_pos != std::string::npos);
    if (line == "IN: jump OUT: I_JUMP") saw_jump = true;
    // Re-tokenize and enforce the length filter the writer claims.
    std::istringstream cmd_ss(line.substr(4, out_pos - 4));
    std::istringstream act_ss(line.substr(out_pos + 6));
    std::string w;
    int n_cmd = 0, n_act = 0;
    while (cmd_ss >> w) ++n_cmd;
    while (act_ss >> w) ++n_act;
    CHECK(n_cmd >= 1);
    CHECK(n_cmd <= 8);
    CHECK(n_act >= 1);
    CHECK(n_act <= 13);
  }
  CHECK(lines == n);
  CHECK(saw_jump);
}

TEST_CASE("scan loader builds the documented vocabulary and split") {
  std::string path = temp_path("gk_test_scan.txt");
  write_scan_dataset(path);
  ScanConfig cfg;
  cfg.path = path;
  ScanData d = load_scan(cfg);

  CHECK(d.vocab.src.size() == 21);
  CHECK(d.vocab.act.size() == 7);
  CHECK(d.vocab.src[0] == "<pad>");
  CHECK(d.vocab.src[1] == "<eos>");
  CHECK(d.vocab.pad == 0);
  CHECK(d.vocab.eos == 1);
  CHECK(d.vocab.act[size_t(d.vocab.act_eos)] == "<eos>");
  CHECK(d.vocab.act_eos == 6);
  for (int a = 0; a < int(d.vocab.act.size()); ++a) {
    if (a == d.vocab.act_eos) {
      CHECK(d.vocab.act_to_src[size_t(a)] == d.vocab.eos);
    } else {
      // Action tokens live in the joint source vocabulary under the same name.
      CHECK(d.vocab.src[size_t(d.vocab.act_to_src[size_t(a)])] ==
            d.vocab.act[size_t(a)]);
    }
  }

  CHECK(d.total == 11934);
  CHECK(d.train.size() == 2048);
  CHECK(d.test.size() == 9886);
  CHECK(d.max_cmd == 8);
  CHECK(d.max_act == 13);

  auto key = [](const ScanExample& ex) {
    std::string s;
    for (int32_t t : ex.cmd) s += std::to_string(t) + ",";
    return s;
  };
  std::set<std::string> train_keys;
  for (const auto& ex : d.train) train_keys.insert(key(ex));
  CHECK(train_keys.size() == d.train.size());
  for (const auto& ex : d.test) CHECK(train_keys.count(key(ex)) == 0);

  // The single-word example decodes to the documented pair.
  bool found = false;
  auto scan_pool = [&](const std::vector<ScanExample>& pool) {
    for (const auto& ex : pool) {
      if (ex.cmd.size() == 1 &&
          d.vocab.src[size_t(ex.cmd[0])] == "jump") {
        REQUIRE(ex.act.size() == 1);
        CHECK(d.vocab.act[size_t(ex.act[0])] == "I_JUMP");
        found = true;
      }
    }
  };
  scan_pool(d.train);
  scan_pool(d.test);
  CHECK(found);
}

TEST_CASE("scan split is deterministic in the data seed") {
  std::string path = temp_path("gk_test_scan.txt");
  write_scan_dataset(path);
  ScanConfig cfg;
  cfg.path = path;
  ScanData a = load_scan(cfg);
  ScanData b = load_scan(cfg);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].cmd == b.train[i].cmd);
    CHECK(a.train[i].act == b.train[i].act);
  }

  cfg.data_seed = 1;
  ScanData c = load_scan(cfg);
  bool differs = false;
  for (size_t i = 0; i < a.train.size() && !differs; ++i) {
    differs = a.train[i].cmd != c.train[i].cmd;
  }
  CHECK(differs);
}

TEST_CASE("scan loader reports file problems precisely") {
  ScanConfig missing;
  missing.path = temp_path("gk_test_scan_does_not_exist.txt");
  CHECK_THROWS_WITH_AS(load_scan(missing),
                       doctest::Contains("missing dataset file"),
                       std::runtime_error);

  std::string bad = temp_path("gk_test_scan_bad.txt");
  {
    std::ofstream out(bad);
    out << "IN: jump OUT: I_JUMP\n";
    out << "IN: walk I_WALK\n";  // no OUT: marker
  }
  ScanConfig cfg;
  cfg.path = bad;
  CHECK_THROWS_WITH_AS(load_scan(cfg), doctest::Contains("line 2"),
                       std::runtime_error);
}

TEST_CASE("dyck batches are dense copies") {
  DyckConfig cfg;
  cfg.n_test = 10;
  DyckData d = generate_dyck(cfg);
  Batch b = make_dyck_batch(d.train, {3, 0, 7});
  CHECK(b.n == 3);
  CHECK(b.t_in == 24);
  CHECK(b.t_out == 24);
  CHECK(b.dec_in.empty());
  CHECK(b.in_len.empty());
  for (int k = 0; k < 24; ++k) {
    CHECK(b.in[size_t(k)] == d.train[3].tokens[size_t(k)]);
    CHECK(b.tgt[size_t(24 + k)] == d.train[0].depths[size_t(k)]);
    CHECK(b.in[size_t(48 + k)] == d.train[7].tokens[size_t(k)]);
  }
  CHECK_THROWS(make_dyck_batch(d.train, {}));
}

TEST_CASE("scan batches pad and teacher-force as documented") {
  std::string path = temp_path("gk_test_scan.txt");
  write_scan_dataset(path);
  ScanConfig cfg;
  cfg.path = path;
  ScanData d = load_scan(cfg);

  // Pick one short and one long example so padding is exercised.
  int64_t short_i = -1, long_i = -1;
  for (int64_t i = 0; i < int64_t(d.train.size()); ++i) {
    const ScanExample& ex = d.train[size_t(i)];
    if (short_i < 0 || ex.cmd.size() < d.train[size_t(short_i)].cmd.size()) {
      short_i = i;
    }
    if (long_i < 0 || ex.act.size() > d.train[size_t(long_i)].act.size()) {
      long_i = i;
    }
  }
  const ScanExample& se = d.train[size_t(short_i)];
  const ScanExample& le = d.train[size_t(long_i)];
  REQUIRE(se.cmd.size() < le.cmd.size());

  Batch b = make_scan_batch(d.train, {short_i, long_i}, d.vocab);
  CHECK(b.n == 2);
  CHECK(b.t_in == int(std::max(se.cmd.size(), le.cmd.size())) + 1);
  CHECK(b.t_out == int(std::max(se.act.size(), le.act.size())) + 1);
  CHECK(b.in_len[0] == int32_t(se.cmd.size()) + 1);
  CHECK(b.in_len[1] == int32_t(le.cmd.size()) + 1);

  // Row 0: command tokens, then eos, then pad to t_in.
  for (size_t k = 0; k < se.cmd.size(); ++k) CHECK(b.in[k] == se.cmd[k]);
  CHECK(b.in[se.cmd.size()] == int32_t(d.vocab.eos));
  for (int k = int(se.cmd.size()) + 1; k < b.t_in; ++k) {
    CHECK(b.in[size_t(k)] == int32_t(d.vocab.pad));
  }

  // Decoder input starts at eos and shifts the action stream right by one,
  // mapped into the joint vocabulary; targets end with act_eos then -1.
  const int32_t* dec0 = b.dec_in.data();
  const int32_t* tgt0 = b.tgt.data();
  CHECK(dec0[0] == int32_t(d.vocab.eos));
  for (size_t k = 0; k < se.act.size(); ++k) {
    if (k + 1 < size_t(b.t_out)) {
      CHECK(dec0[k + 1] == d.vocab.act_to_src[size_t(se.act[k])]);
    }
    CHECK(tgt0[k] == se.act[k]);
  }
  CHECK(tgt0[se.act.size()] == int32_t(d.vocab.act_eos));
  for (int k = int(se.act.size()) + 1; k < b.t_out; ++k) {
    CHECK(tgt0[size_t(k)] == -1);
  }

  // Row 1 is the longest example: no -1 in targets except none (fills t_out).
  const int32_t* tgt1 = b.tgt.data() + b.t_out;
  CHECK(tgt1[le.act.size()] == int32_t(d.vocab.act_eos));
  for (size_t k = 0; k < le.act.size(); ++k) CHECK(tgt1[k] == le.act[k]);
}

TEST_CASE("batch stream covers each example once per epoch") {
  BatchStream one(50, 50, named_stream(0, "batches"));
  std::vector<int64_t> idx = one.next_indices();
  REQUIRE(idx.size() == 50);
  std::set<int64_t> uniq(idx.begin(), idx.end());
  CHECK(uniq.size() == 50);
  CHECK(*uniq.begin() == 0);
  CHECK(*uniq.rbegin() == 49);

  BatchStream four(50, 16, named_stream(0, "batches"));
  std::vector<size_t> sizes;
  std::vector<int64_t> all;
  for (int k = 0; k < 4; ++k) {
    std::vector<int64_t> part = four.next_indices();
    sizes.push_back(part.size());
    all.insert(all.end(), part.begin(), part.end());
  }
  CHECK(sizes == std::vector<size_t>{16, 16, 16, 2});
  std::set<int64_t> cover(all.begin(), all.end());
  CHECK(all.size() == 50);
  CHECK(cover.size() == 50);
  CHECK(four.epoch() == 0);  // epoch counter ticks as the next epoch starts
  four.next_indices();
  CHECK(four.epoch() == 1);
}

TEST_CASE("batch stream reshuffles between epochs without losing examples") {
  BatchStream s(50, 50, named_stream(3, "batches"));
  std::vector<int64_t> e0 = s.next_indices();
  std::vector<int64_t> e1 = s.next_indices();
  CHECK(e0 != e1);  // a fixed permutation repeating would be a broken shuffle
  std::vector<int64_t> a = e0, b = e1;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("batch stream restore resumes the exact index sequence") {
  BatchStream a(50, 16, named_stream(9, "batches"));
  a.next_indices();
  a.next_indices();

  BatchStream b(50, 16, named_stream(9, "batches"));
  b.restore(a.rng_state(), a.epoch(), a.pos(), a.perm());
  for (int k = 0; k < 7; ++k) {
    CHECK(a.next_indices() == b.next_indices());
  }
  CHECK_THROWS(b.restore(a.rng_state(), a.epoch(), a.pos(), {1, 2, 3}));
  CHECK_THROWS(BatchStream(10, 0, named_stream(0, "batches")));
}

}  // TEST_SUITE
