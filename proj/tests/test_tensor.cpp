#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "rng.hpp"
#include "tensor.hpp"

using namespace gk;

namespace {

struct Input {
  int ndim;
  Shape shape;
  std::vector<double> data;
};

Input rand_input(int ndim, Shape shape, Rng& rng, double lo = -1.0,
                 double hi = 1.0) {
  int64_t n = 1;
  for (int i = 0; i < ndim; ++i) n *= shape[size_t(i)];
  Input in{ndim, shape, std::vector<double>(size_t(n))};
  for (double& v : in.data) v = rng.next_uniform(lo, hi);
  return in;
}

// Reduces any slot to a scalar through a fixed random weighting so backward
// has a single seed.
int weighted_sum(Tape<double>& tp, int y, const std::vector<double>& w) {
  const int n = int(tp.numel(y));
  int flat = tp.alias(y, 2, {1, n, 1, 1});
  int wid = tp.leaf(2, {n, 1, 1, 1}, w.data(), false);
  return tp.matmul(flat, wid);
}

std::vector<double> fixed_weights(int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(n), 0.0);
  for (double& v : w) v = rng.next_uniform(-1.0, 1.0);
  return w;
}

using GraphFn = std::function<int(Tape<double>&, const std::vector<int>&)>;

// Central-difference check of d(scalar)/d(every input coordinate).
void fd_check(std::vector<Input>& ins, const GraphFn& graph) {
  auto build = [&](Tape<double>& tp) {
    std::vector<int> ids;
    for (Input& in : ins) {
      ids.push_back(tp.leaf(in.ndim, in.shape, in.data.data(), true));
    }
    return graph(tp, ids);
  };
  Tape<double> tp(true);
  int loss = build(tp);
  REQUIRE(tp.numel(loss) == 1);
  tp.backward(loss);
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tp2(true);
    std::vector<int> ids;
    for (Input& in : ins) {
      ids.push_back(tp2.leaf(in.ndim, in.shape, in.data.data(), true));
    }
    int l2 = graph(tp2, ids);
    tp2.backward(l2);
    for (size_t i = 0; i < ins.size(); ++i) {
      analytic.emplace_back(tp2.grad(ids[i]),
                            tp2.grad(ids[i]) + ins[i].data.size());
    }
  }
  const double h = 1e-5;
  for (size_t i = 0; i < ins.size(); ++i) {
    for (size_t j = 0; j < ins[i].data.size(); ++j) {
      const double keep = ins[i].data[j];
      auto eval = [&](double v) {
        ins[i].data[j] = v;
        Tape<double> t2(true);
        int l = build(t2);
        return t2.val(l)[0];
      };
      double fd = (eval(keep + h) - eval(keep - h)) / (2 * h);
      ins[i].data[j] = keep;
      double a = analytic[i][j];
      CHECK_MESSAGE(std::abs(fd - a) <= 1e-6 + 2e-5 * std::max(std::abs(fd),
                                                               std::abs(a)),
                    "input ", i, " coord ", j, ": fd=", fd, " analytic=", a);
    }
  }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul forward matches a hand computation") {
  Tape<double> tp(false);
  std::vector<double> a{1, 2, 3, 4};      // [2,2]
  std::vector<double> b{5, 6, 7, 8};      // [2,2]
  int ia = tp.leaf(2, {2, 2, 1, 1}, a.data(), false);
  int ib = tp.leaf(2, {2, 2, 1, 1}, b.data(), false);
  int y = tp.matmul(ia, ib);
  const double* v = tp.val(y);
  CHECK(v[0] == doctest::Approx(19));
  CHECK(v[1] == doctest::Approx(22));
  CHECK(v[2] == doctest::Approx(43));
  CHECK(v[3] == doctest::Approx(50));
}

TEST_CASE("matmul gradients") {
  Rng rng(1);
  std::vector<Input> ins{rand_input(2, {3, 4, 1, 1}, rng),
                         rand_input(2, {4, 5, 1, 1}, rng)};
  std::vector<double> w = fixed_weights(15, 10);
  fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
    return weighted_sum(tp, tp.matmul(ids[0], ids[1]), w);
  });
}

TEST_CASE("add gradients") {
  Rng rng(2);
  std::vector<Input> ins{rand_input(2, {3, 4, 1, 1}, rng),
                         rand_input(2, {3, 4, 1, 1}, rng)};
  std::vector<double> w = fixed_weights(12, 11);
  fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
    return weighted_sum(tp, tp.add(ids[0], ids[1]), w);
  });
}

TEST_CASE("relu gradients away from the kink") {
  Rng rng(3);
  Input in = rand_input(2, {4, 5, 1, 1}, rng);
  for (double& v : in.data) v += (v >= 0 ? 0.2 : -0.2);
  std::vector<Input> ins{in};
  std::vector<double> w = fixed_weights(20, 12);
  fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
    return weighted_sum(tp, tp.relu(ids[0]), w);
  });
}

TEST_CASE("swap12 permutes [B,T,H,D] to [B,H,T,D]") {
  Rng rng(4);
  Input in = rand_input(4, {2, 3, 4, 2}, rng);
  Tape<double> tp(false);
  int x = tp.leaf(4, {2, 3, 4, 2}, in.data.data(), false);
  int y = tp.swap12(x);
  CHECK(tp.dim(y, 0) == 2);
  CHECK(tp.dim(y, 1) == 4);
  CHECK(tp.dim(y, 2) == 3);
  CHECK(tp.dim(y, 3) == 2);
  const double* v = tp.val(y);
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 3; ++t)
      for (int hh = 0; hh < 4; ++hh)
        for (int d = 0; d < 2; ++d) {
          double src = in.data[size_t(((b * 3 + t) * 4 + hh) * 2 + d)];
          CHECK(v[((b * 4 + hh) * 3 + t) * 2 + d] == src);
        }
}

TEST_CASE("swap12 gradients") {
  Rng rng(5);
  std::vector<Input> ins{rand_input(4, {2, 3, 2, 2}, rng)};
  std::vector<double> w = fixed_weights(24, 13);
  fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
    return weighted_sum(tp, tp.swap12(ids[0]), w);
  });
}

TEST_CASE("bmm and bmm_nt gradients") {
  Rng rng(6);
  SUBCASE("bmm") {
    std::vector<Input> ins{rand_input(4, {2, 2, 3, 4}, rng),
                           rand_input(4, {2, 2, 4, 2}, rng)};
    std::vector<double> w = fixed_weights(2 * 2 * 3 * 2, 14);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      return weighted_sum(tp, tp.bmm(ids[0], ids[1]), w);
    });
  }
  SUBCASE("bmm_nt with alpha") {
    std::vector<Input> ins{rand_input(4, {2, 2, 3, 4}, rng),
                           rand_input(4, {2, 2, 5, 4}, rng)};
    std::vector<double> w = fixed_weights(2 * 2 * 3 * 5, 15);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      return weighted_sum(tp, tp.bmm_nt(ids[0], ids[1], 0.37), w);
    });
  }
}

TEST_CASE("bmm_nt equals bmm against the explicit transpose") {
  Rng rng(7);
  Input q = rand_input(4, {1, 2, 3, 4}, rng);
  Input k = rand_input(4, {1, 2, 5, 4}, rng);
  Tape<double> tp(false);
  int iq = tp.leaf(4, q.shape, q.data.data(), false);
  int ik = tp.leaf(4, k.shape, k.data.data(), false);
  int y = tp.bmm_nt(iq, ik, 1.0);
  const double* v = tp.val(y);
  for (int hh = 0; hh < 2; ++hh)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j) {
        double dot = 0;
        for (int d = 0; d < 4; ++d) {
          dot += q.data[size_t(((hh * 3) + i) * 4 + d)] *
                 k.data[size_t(((hh * 5) + j) * 4 + d)];
        }
        CHECK(v[(hh * 3 + i) * 5 + j] == doctest::Approx(dot));
      }
}

TEST_CASE("layernorm output is normalized and gradients check out") {
  Rng rng(8);
  Input x = rand_input(2, {4, 6, 1, 1}, rng);
  Input g = rand_input(1, {6, 1, 1, 1}, rng, 0.5, 1.5);
  Input b = rand_input(1, {6, 1, 1, 1}, rng, -0.3, 0.3);
  SUBCASE("unit gain, zero bias normalizes each row") {
    std::vector<double> ones(6, 1.0), zeros(6, 0.0);
    Tape<double> tp(false);
    int ix = tp.leaf(2, x.shape, x.data.data(), false);
    int ig = tp.leaf(1, g.shape, ones.data(), false);
    int ib = tp.leaf(1, b.shape, zeros.data(), false);
    int y = tp.layernorm(ix, ig, ib, 1e-5);
    const double* v = tp.val(y);
    for (int r = 0; r < 4; ++r) {
      double mean = 0, var = 0;
      for (int c = 0; c < 6; ++c) mean += v[r * 6 + c];
      mean /= 6;
      for (int c = 0; c < 6; ++c) {
        var += (v[r * 6 + c] - mean) * (v[r * 6 + c] - mean);
      }
      var /= 6;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  SUBCASE("gradients") {
    std::vector<Input> ins{x, g, b};
    std::vector<double> w = fixed_weights(24, 16);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      return weighted_sum(tp, tp.layernorm(ids[0], ids[1], ids[2], 1e-5), w);
    });
  }
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  Rng rng(9);
  Input x = rand_input(4, {2, 2, 3, 4}, rng, -2.0, 2.0);
  SUBCASE("normalization") {
    Tape<double> tp(false);
    int ix = tp.leaf(4, x.shape, x.data.data(), false);
    int y = tp.softmax(ix);
    const double* v = tp.val(y);
    for (int r = 0; r < 2 * 2 * 3; ++r) {
      double s = 0;
      for (int c = 0; c < 4; ++c) {
        CHECK(v[r * 4 + c] > 0);
        s += v[r * 4 + c];
      }
      CHECK(s == doctest::Approx(1.0));
    }
  }
  SUBCASE("gradients") {
    std::vector<Input> ins{x};
    std::vector<double> w = fixed_weights(48, 17);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      return weighted_sum(tp, tp.softmax(ids[0]), w);
    });
  }
}

TEST_CASE("additive masks broadcast and pass gradients") {
  Rng rng(10);
  SUBCASE("ts mask forward + masked softmax weight is zero") {
    Input x = rand_input(4, {2, 2, 3, 3}, rng);
    std::vector<double> mask(9, 0.0);
    mask[0 * 3 + 2] = -1e9;  // query 0 must not see key 2
    Tape<double> tp(false);
    int ix = tp.leaf(4, x.shape, x.data.data(), false);
    int im = tp.leaf(2, {3, 3, 1, 1}, mask.data(), false);
    int y = tp.softmax(tp.add_mask_ts(ix, im));
    const double* v = tp.val(y);
    for (int bh = 0; bh < 4; ++bh) CHECK(v[bh * 9 + 2] < 1e-12);
  }
  SUBCASE("ts mask gradients") {
    std::vector<Input> ins{rand_input(4, {2, 2, 3, 3}, rng)};
    std::vector<double> mask(9, 0.0);
    mask[5] = -1e9;
    std::vector<double> w = fixed_weights(36, 18);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      int im = tp.leaf(2, {3, 3, 1, 1}, mask.data(), false);
      return weighted_sum(tp, tp.softmax(tp.add_mask_ts(ids[0], im)), w);
    });
  }
  SUBCASE("bs mask gradients") {
    std::vector<Input> ins{rand_input(4, {2, 2, 3, 4}, rng)};
    std::vector<double> mask(8, 0.0);
    mask[3] = -1e9;  // batch 0, key 3
    mask[6] = -1e9;  // batch 1, key 2
    std::vector<double> w = fixed_weights(48, 19);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      int im = tp.leaf(2, {2, 4, 1, 1}, mask.data(), false);
      return weighted_sum(tp, tp.softmax(tp.add_mask_bs(ids[0], im)), w);
    });
  }
}

TEST_CASE("embed gathers rows and accumulates gradients over repeats") {
  Rng rng(11);
  Input table = rand_input(2, {5, 4, 1, 1}, rng);
  std::vector<int32_t> ids{1, 3, 1, 0, 4, 1};
  SUBCASE("forward gather") {
    Tape<double> tp(false);
    int it = tp.leaf(2, table.shape, table.data.data(), false);
    int y = tp.embed(it, ids.data(), int64_t(ids.size()));
    const double* v = tp.val(y);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int d = 0; d < 4; ++d)
        CHECK(v[i * 4 + d] == table.data[size_t(ids[i]) * 4 + size_t(d)]);
  }
  SUBCASE("gradients") {
    std::vector<Input> ins{table};
    std::vector<double> w = fixed_weights(24, 20);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& tids) {
      return weighted_sum(
          tp, tp.embed(tids[0], ids.data(), int64_t(ids.size())), w);
    });
  }
}

TEST_CASE("add_pos broadcasts the position table over the batch") {
  Rng rng(12);
  Input x = rand_input(3, {2, 3, 5, 1}, rng);
  Input pos = rand_input(2, {4, 5, 1, 1}, rng);
  SUBCASE("forward") {
    Tape<double> tp(false);
    int ix = tp.leaf(3, x.shape, x.data.data(), false);
    int ip = tp.leaf(2, pos.shape, pos.data.data(), false);
    int y = tp.add_pos(ix, ip);
    const double* v = tp.val(y);
    for (int b = 0; b < 2; ++b)
      for (int t = 0; t < 3; ++t)
        for (int d = 0; d < 5; ++d) {
          size_t i = size_t((b * 3 + t) * 5 + d);
          CHECK(v[i] ==
                doctest::Approx(x.data[i] + pos.data[size_t(t * 5 + d)]));
        }
  }
  SUBCASE("gradients for activations and table") {
    std::vector<Input> ins{x, pos};
    std::vector<double> w = fixed_weights(30, 21);
    fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
      return weighted_sum(tp, tp.add_pos(ids[0], ids[1]), w);
    });
  }
}

TEST_CASE("cross_entropy value, ignore_index, and gradients") {
  Rng rng(13);
  Input logits = rand_input(2, {6, 5, 1, 1}, rng, -1.5, 1.5);
  std::vector<int32_t> tgt{2, 0, -1, 4, 1, 3};
  SUBCASE("uniform logits give ln(C)") {
    std::vector<double> flat(30, 0.7);
    Tape<double> tp(false);
    int il = tp.leaf(2, {6, 5, 1, 1}, flat.data(), false);
    int l = tp.cross_entropy(il, tgt.data(), 6, -1);
    CHECK(tp.val(l)[0] == doctest::Approx(std::log(5.0)));
  }
  SUBCASE("value matches a manual mean over non-ignored rows") {
    Tape<double> tp(false);
    int il = tp.leaf(2, logits.shape, logits.data.data(), false);
    int l = tp.cross_entropy(il, tgt.data(), 6, -1);
    double expect = 0;
    int counted = 0;
    for (int r = 0; r < 6; ++r) {
      if (tgt[size_t(r)] < 0) continue;
      double mx = -1e30, z = 0;
      for (int c = 0; c < 5; ++c) {
        mx = std::max(mx, logits.data[size_t(r * 5 + c)]);
      }
      for (int c = 0; c < 5; ++c) {
        z += std::exp(logits.data[size_t(r * 5 + c)] - mx);
      }
      expect += mx + std::log(z) - logits.data[size_t(r * 5 + tgt[size_t(r)])];
      ++counted;
    }
    CHECK(counted == 5);
    CHECK(tp.val(l)[0] == doctest::Approx(expect / counted));
  }
  SUBCASE("gradients, including zero rows at ignored targets") {
    Tape<double> tp(true);
    int il = tp.leaf(2, logits.shape, logits.data.data(), true);
    int l = tp.cross_entropy(il, tgt.data(), 6, -1);
    tp.backward(l);
    const double* g = tp.grad(il);
    for (int c = 0; c < 5; ++c) CHECK(g[2 * 5 + c] == 0.0);
    std::vector<Input> ins{logits};
    fd_check(ins, [&](Tape<double>& tp2, const std::vector<int>& ids) {
      return tp2.cross_entropy(ids[0], tgt.data(), 6, -1);
    });
  }
}

TEST_CASE("attention-shaped composite graph passes the gradient check") {
  Rng rng(14);
  const int B = 1, T = 3, H = 2, dh = 2, d = 4;
  std::vector<Input> ins{
      rand_input(2, {B * T, d, 1, 1}, rng),  // activations
      rand_input(2, {d, d, 1, 1}, rng),      // wq
      rand_input(2, {d, d, 1, 1}, rng),      // wk
      rand_input(2, {d, d, 1, 1}, rng),      // wv
  };
  std::vector<double> mask(size_t(T) * T, 0.0);
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) mask[size_t(i * T + j)] = -1e9;
  std::vector<double> w = fixed_weights(B * T * d, 22);
  fd_check(ins, [&](Tape<double>& tp, const std::vector<int>& ids) {
    int q = tp.swap12(tp.alias(tp.matmul(ids[0], ids[1]), 4, {B, T, H, dh}));
    int k = tp.swap12(tp.alias(tp.matmul(ids[0], ids[2]), 4, {B, T, H, dh}));
    int v = tp.swap12(tp.alias(tp.matmul(ids[0], ids[3]), 4, {B, T, H, dh}));
    int im = tp.leaf(2, {T, T, 1, 1}, mask.data(), false);
    int scores = tp.add_mask_ts(tp.bmm_nt(q, k, 1.0 / std::sqrt(2.0)), im);
    int ctx = tp.bmm(tp.softmax(scores), v);
    int ctx2 = tp.alias(tp.swap12(ctx), 2, {B * T, d, 1, 1});
    return weighted_sum(tp, ctx2, w);
  });
}

TEST_CASE("tape reset rebuilds the same graph deterministically") {
  Rng rng(15);
  Input x = rand_input(2, {3, 4, 1, 1}, rng);
  Input w = rand_input(2, {4, 2, 1, 1}, rng);
  std::vector<int32_t> tgt{1, 0, 1};
  Tape<double> tp(true);
  double first = 0;
  for (int pass = 0; pass < 3; ++pass) {
    tp.reset();
    int ix = tp.leaf(2, x.shape, x.data.data(), true);
    int iw = tp.leaf(2, w.shape, w.data.data(), true);
    int l = tp.cross_entropy(tp.matmul(ix, iw), tgt.data(), 3, -1);
    tp.backward(l);
    if (pass == 0) {
      first = tp.val(l)[0];
    } else {
      CHECK(tp.val(l)[0] == first);
    }
  }
}

TEST_CASE("float graph agrees with the double graph") {
  Rng rng(16);
  Input x = rand_input(2, {4, 6, 1, 1}, rng);
  Input w = rand_input(2, {6, 3, 1, 1}, rng);
  std::vector<int32_t> tgt{0, 2, 1, 2};
  std::vector<float> xf(x.data.begin(), x.data.end());
  std::vector<float> wf(w.data.begin(), w.data.end());

  Tape<double> td(true);
  int dx = td.leaf(2, x.shape, x.data.data(), true);
  int dw = td.leaf(2, w.shape, w.data.data(), true);
  int dl = td.cross_entropy(td.matmul(dx, dw), tgt.data(), 4, -1);
  td.backward(dl);

  Tape<float> tf(true);
  int fx = tf.leaf(2, x.shape, xf.data(), true);
  int fw = tf.leaf(2, w.shape, wf.data(), true);
  int fl = tf.cross_entropy(tf.matmul(fx, fw), tgt.data(), 4, -1);
  tf.backward(fl);

  CHECK(double(tf.val(fl)[0]) == doctest::Approx(td.val(dl)[0]).epsilon(1e-4));
  for (int64_t i = 0; i < td.numel(dx); ++i) {
    CHECK(double(tf.grad(fx)[i]) ==
          doctest::Approx(td.grad(dx)[i]).epsilon(2e-3));
  }
}

}  // TEST_SUITE
