#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "rng.hpp"

using namespace gk;

TEST_SUITE("rng") {

TEST_CASE("same seed gives the same sequence") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("named streams are independent and reproducible") {
  Rng a = named_stream(42, "init");
  Rng b = named_stream(42, "init");
  Rng c = named_stream(42, "data_order");
  Rng d = named_stream(43, "init");
  CHECK(a.state == b.state);
  CHECK(a.state != c.state);
  CHECK(a.state != d.state);
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("stream state round-trips through save/restore") {
  Rng a = named_stream(7, "probe_pairs");
  for (int i = 0; i < 10; ++i) a.next_u64();
  uint64_t saved = a.state;
  uint64_t expected = a.next_u64();
  Rng b(0);
  b.state = saved;
  CHECK(b.next_u64() == expected);
}

TEST_CASE("next_double lies in [0,1)") {
  Rng r(99);
  for (int i = 0; i < 10000; ++i) {
    double x = r.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("next_below stays in range and covers small moduli") {
  Rng r(5);
  std::set<uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    uint64_t x = r.next_below(7);
    CHECK(x < 7);
    seen.insert(x);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS(r.next_below(0));
}

TEST_CASE("next_normal has roughly standard moments") {
  Rng r(2024);
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.next_normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("sample_distinct draws k distinct in-range values") {
  Rng r(11);
  std::vector<int64_t> s = sample_distinct(100, 20, r);
  CHECK(s.size() == 20);
  std::set<int64_t> uniq(s.begin(), s.end());
  CHECK(uniq.size() == 20);
  for (int64_t v : s) {
    CHECK(v >= 0);
    CHECK(v < 100);
  }
  std::vector<int64_t> all = sample_distinct(5, 5, r);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<int64_t>{0, 1, 2, 3, 4});
  CHECK_THROWS(sample_distinct(3, 4, r));
}

TEST_CASE("shuffle permutes without loss") {
  Rng r(3);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> orig = v;
  shuffle(v, r);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}

}  // TEST_SUITE
