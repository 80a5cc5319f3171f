#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "doctest.h"
#include "optim.hpp"
#include "params.hpp"

namespace {

using namespace gk;

// Two parameters: a 2x2 weight (decay) and a 2-vector gain (no decay).
ParamSet two_params() {
  ParamSet ps;
  ps.add("w", 2, {2, 2, 1, 1}, true);
  ps.add("ln.g", 1, {2, 1, 1, 1}, false);
  return ps;
}

}  // namespace

TEST_SUITE("optim") {

TEST_CASE("clip_global reports the pre-clip norm and rescales") {
  std::vector<double> g{3.0, 4.0};  // norm 5
  double n = clip_global(g.data(), 2, 1.0);
  CHECK(n == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  double post = std::sqrt(g[0] * g[0] + g[1] * g[1]);
  CHECK(post == doctest::Approx(1.0));
}

TEST_CASE("clip_global leaves small gradients untouched") {
  std::vector<double> g{0.3, 0.4};
  std::vector<double> before = g;
  double n = clip_global(g.data(), 2, 1.0);
  CHECK(n == doctest::Approx(0.5));
  CHECK(g == before);
}

TEST_CASE("clip_global is idempotent at the boundary") {
  std::vector<float> g(1000, 0.5f);
  clip_global(g.data(), int64_t(g.size()), 1.0);
  std::vector<float> once = g;
  clip_global(g.data(), int64_t(g.size()), 1.0);
  CHECK(g == once);  // a re-clip of an already-clipped vector must be identity
}

TEST_CASE("clip_global rejects non-finite gradients") {
  std::vector<double> g{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS(clip_global(g.data(), 2, 1.0));
  std::vector<double> inf{std::numeric_limits<double>::infinity(), 0.0};
  CHECK_THROWS(clip_global(inf.data(), 2, 1.0));
}

TEST_CASE("adamw first step matches the hand-computed update") {
  ParamSet ps = two_params();
  AdamW<double> opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.0;
  opt.init(ps.total());

  std::vector<double> theta{1.0, -2.0, 0.5, 0.0, 1.0, 1.0};
  std::vector<double> grad{0.1, -0.2, 0.3, 0.0, 0.05, -0.05};
  std::vector<double> before = theta;
  opt.step(theta.data(), grad.data(), ps);

  // After one step with zero-initialized moments, bias correction makes
  // m_hat = g and v_hat = g^2, so the update is -lr * g/(|g|+eps) = -lr*sign.
  for (size_t i = 0; i < theta.size(); ++i) {
    if (grad[i] == 0.0) {
      CHECK(theta[i] == before[i]);
    } else {
      double sign = grad[i] > 0 ? 1.0 : -1.0;
      double expected = before[i] - 0.1 * grad[i] / (std::abs(grad[i]) + 1e-8);
      CHECK(theta[i] == doctest::Approx(expected).epsilon(1e-9));
      CHECK(theta[i] == doctest::Approx(before[i] - 0.1 * sign).epsilon(1e-6));
    }
  }
  CHECK(opt.t == 1);
}

TEST_CASE("adamw second step matches an explicit reference loop") {
  ParamSet ps = two_params();
  AdamW<double> opt;
  opt.lr = 0.05;
  opt.weight_decay = 0.0;
  opt.init(ps.total());

  std::vector<double> theta{0.7, -0.3, 0.2, 0.9, 1.1, 0.95};
  std::vector<double> ref = theta;
  std::vector<double> g1{0.3, -0.1, 0.2, 0.05, -0.4, 0.25};
  std::vector<double> g2{-0.2, 0.4, 0.1, -0.3, 0.2, -0.1};

  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
  auto ref_step = [&](const std::vector<double>& g, int64_t t) {
    for (size_t i = 0; i < ref.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.98 * v[i] + 0.02 * g[i] * g[i];
      double mh = m[i] / (1.0 - std::pow(0.9, double(t)));
      double vh = v[i] / (1.0 - std::pow(0.98, double(t)));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  };
  ref_step(g1, 1);
  ref_step(g2, 2);

  opt.step(theta.data(), g1.data(), ps);
  opt.step(theta.data(), g2.data(), ps);
  for (size_t i = 0; i < theta.size(); ++i) {
    CHECK(theta[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("weight decay is decoupled and skips no-decay parameters") {
  ParamSet ps = two_params();
  AdamW<double> with;
  with.lr = 0.1;
  with.weight_decay = 0.5;
  with.init(ps.total());
  AdamW<double> without;
  without.lr = 0.1;
  without.weight_decay = 0.0;
  without.init(ps.total());

  std::vector<double> theta_a{1.0, -2.0, 0.5, 4.0, 1.0, -1.5};
  std::vector<double> theta_b = theta_a;
  std::vector<double> grad{0.1, -0.2, 0.3, 0.4, 0.05, -0.05};
  with.step(theta_a.data(), grad.data(), ps);
  without.step(theta_b.data(), grad.data(), ps);

  // Decoupled decay shifts the Adam update by exactly -lr*wd*theta_pre on the
  // first four coordinates ("w") and leaves the gain coordinates alone.
  std::vector<double> pre{1.0, -2.0, 0.5, 4.0, 1.0, -1.5};
  for (size_t i = 0; i < theta_a.size(); ++i) {
    double expected = theta_b[i] - (i < 4 ? 0.1 * 0.5 * pre[i] : 0.0);
    CHECK(theta_a[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adamw float specialization stays close to double") {
  ParamSet ps = two_params();
  AdamW<float> fopt;
  fopt.lr = 0.01;
  fopt.weight_decay = 0.1;
  fopt.init(ps.total());
  AdamW<double> dopt;
  dopt.lr = 0.01;
  dopt.weight_decay = 0.1;
  dopt.init(ps.total());

  std::vector<float> tf{0.5f, -0.25f, 1.5f, 0.75f, 1.0f, 1.0f};
  std::vector<double> td(tf.begin(), tf.end());
  for (int step = 0; step < 25; ++step) {
    std::vector<float> gf;
    std::vector<double> gd;
    for (size_t i = 0; i < tf.size(); ++i) {
      double g = std::sin(0.3 * double(step) + double(i));
      gf.push_back(float(g));
      gd.push_back(g);
    }
    fopt.step(tf.data(), gf.data(), ps);
    dopt.step(td.data(), gd.data(), ps);
  }
  for (size_t i = 0; i < tf.size(); ++i) {
    CHECK(double(tf[i]) == doctest::Approx(td[i]).epsilon(1e-4));
  }
}

}  // TEST_SUITE
