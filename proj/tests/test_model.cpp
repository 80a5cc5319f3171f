#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "model.hpp"
#include "tasks.hpp"

namespace {

using namespace gk;

DyckModelConfig tiny_dyck_cfg() {
  DyckModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab = 3;
  cfg.n_classes = 5;
  cfg.max_len = 6;
  return cfg;
}

Batch tiny_dyck_batch() {
  DyckConfig dc;
  dc.seq_len = 6;
  dc.max_depth = 3;
  dc.n_train = 4;
  dc.n_test = 0;
  DyckData d = generate_dyck(dc);
  return make_dyck_batch(d.train, {0, 1, 2, 3});
}

ScanModelConfig tiny_scan_cfg() {
  ScanModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  return cfg;  // vocab/position sizes keep the real dataset dimensions
}

ScanData tiny_scan_data() {
  std::string path =
      (std::filesystem::temp_directory_path() / "gk_test_scan_model.txt")
          .string();
  write_scan_dataset(path);
  ScanConfig cfg;
  cfg.path = path;
  return load_scan(cfg);
}

// Central-difference check over a strided sample of coordinates.
template <typename T, typename Model>
double max_rel_err(Model& model, std::vector<T> theta, const Batch& batch,
                   int64_t stride, T h) {
  std::vector<T> grad(theta.size());
  model.loss_and_grad(theta.data(), batch, grad.data());
  double worst = 0;
  for (int64_t i = 0; i < int64_t(theta.size()); i += stride) {
    T keep = theta[size_t(i)];
    theta[size_t(i)] = keep + h;
    double up = model.loss_only(theta.data(), batch);
    theta[size_t(i)] = keep - h;
    double dn = model.loss_only(theta.data(), batch);
    theta[size_t(i)] = keep;
    double fd = (up - dn) / (2.0 * double(h));
    double denom = std::max({std::abs(fd), std::abs(double(grad[size_t(i)])),
                             1e-8});
    worst = std::max(worst, std::abs(fd - double(grad[size_t(i)])) / denom);
  }
  return worst;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter totals match the architecture arithmetic") {
  DyckModel<double> dyck{DyckModelConfig{}};
  CHECK(dyck.params().total() == 268544);
  ScanModel<float> scan{ScanModelConfig{}};
  CHECK(scan.params().total() == 3959296);
}

TEST_CASE("initialization is seeded, bounded, and identity for layernorm") {
  DyckModel<double> model{DyckModelConfig{}};
  std::vector<double> a = model.init(42);
  std::vector<double> b = model.init(42);
  std::vector<double> c = model.init(43);
  CHECK(a == b);
  CHECK(a != c);
  REQUIRE(int64_t(a.size()) == model.params().total());

  double bound = 1.0 / std::sqrt(double(model.config().d_model));
  for (const ParamInfo& p : model.params().infos()) {
    bool is_gain = p.name.size() > 2 && p.name.rfind(".g") == p.name.size() - 2;
    bool is_bias = p.name.size() > 2 && p.name.rfind(".b") == p.name.size() - 2;
    for (int64_t k = 0; k < p.n; ++k) {
      double v = a[size_t(p.off + k)];
      if (is_gain) {
        CHECK(v == 1.0);
      } else if (is_bias) {
        CHECK(v == 0.0);
      } else {
        CHECK(std::abs(v) <= bound);
      }
    }
    CHECK(p.decay == (!is_gain && !is_bias));
  }
}

TEST_CASE("snapshot manifests name the tracked matrices") {
  DyckModel<double> dyck{DyckModelConfig{}};
  std::vector<std::string> dn = dyck.default_snapshot_matrices();
  REQUIRE(dn.size() == 12);
  CHECK(dn[0] == "layer0.attn.wq");
  CHECK(dn[5] == "layer0.mlp.w_down");
  CHECK(dn[6] == "layer1.attn.wq");
  for (const std::string& n : dn) CHECK(dyck.params().has(n));

  ScanModel<float> scan{ScanModelConfig{}};
  std::vector<std::string> sn = scan.default_snapshot_matrices();
  REQUIRE(sn.size() == 10);
  CHECK(sn[0] == "dec2.self.wq");
  CHECK(sn[4] == "dec2.cross.wq");
  CHECK(sn[9] == "dec2.mlp.w_down");
  for (const std::string& n : sn) CHECK(scan.params().has(n));
}

TEST_CASE("dyck gradients agree with finite differences in double") {
  DyckModel<double> model{tiny_dyck_cfg()};
  Batch batch = tiny_dyck_batch();
  double worst = max_rel_err<double>(model, model.init(5), batch, 7, 1e-5);
  CHECK(worst < 1e-3);
}

TEST_CASE("dyck gradients agree with finite differences in float") {
  DyckModel<float> model{tiny_dyck_cfg()};
  Batch batch = tiny_dyck_batch();
  float h = 1e-2f;  // float fd needs a wide stencil to beat roundoff
  double worst = max_rel_err<float>(model, model.init(5), batch, 29, h);
  CHECK(worst < 1e-2);
}

TEST_CASE("scan gradients agree with finite differences in double") {
  ScanModel<double> model{tiny_scan_cfg()};
  ScanData d = tiny_scan_data();
  Batch batch = make_scan_batch(d.train, {0, 1, 2}, d.vocab);
  double worst =
      max_rel_err<double>(model, model.init(5), batch, 211, 1e-5);
  CHECK(worst < 1e-3);
}

TEST_CASE("dyck loss starts near chance and logits have head shape") {
  DyckConfig dc;
  dc.n_train = 20;
  dc.n_test = 30;
  DyckData d = generate_dyck(dc);
  DyckModel<double> model{DyckModelConfig{}};
  std::vector<double> theta = model.init(42);

  EvalResult r = model.evaluate(theta.data(), d.test, 16);
  CHECK(r.n_items == int64_t(d.test.size()) * 24);
  CHECK(r.loss == doctest::Approx(std::log(13.0)).epsilon(0.25));
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);

  std::vector<int64_t> idx{0, 1, 2};
  Batch b = make_dyck_batch(d.train, idx);
  std::vector<double> lg = model.logits(theta.data(), b);
  CHECK(lg.size() == size_t(3) * 24 * 13);
  for (double v : lg) CHECK(std::isfinite(v));

  std::vector<double> grad(theta.size());
  double l1 = model.loss_and_grad(theta.data(), b, grad.data());
  double l2 = model.loss_only(theta.data(), b);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  double gnorm = 0;
  for (double g : grad) gnorm += g * g;
  CHECK(gnorm > 0);
}

TEST_CASE("scan decode emits bounded class sequences") {
  ScanModel<double> model{tiny_scan_cfg()};
  ScanData d = tiny_scan_data();
  std::vector<double> theta = model.init(11);

  std::vector<int64_t> idx{0, 1, 2, 3};
  Batch b = make_scan_batch(d.train, idx, d.vocab);
  std::vector<std::vector<int32_t>> out =
      model.decode(theta.data(), b, d.vocab);
  REQUIRE(out.size() == 4);
  for (const auto& seq : out) {
    CHECK(int(seq.size()) <= model.config().max_act);
    for (int32_t c : seq) {
      CHECK(c >= 0);
      CHECK(c < 7);
      CHECK(c != d.vocab.act_eos);
    }
  }

  std::vector<ScanExample> pool(d.train.begin(), d.train.begin() + 24);
  EvalResult r = model.evaluate(theta.data(), pool, d.vocab, 8);
  CHECK(r.n_items == 24);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  CHECK(r.loss > 0);
  CHECK(std::isfinite(r.loss));

  std::vector<double> grad(theta.size());
  double loss = model.loss_and_grad(theta.data(), b, grad.data());
  CHECK(std::isfinite(loss));
  double gnorm = 0;
  for (double g : grad) gnorm += g * g;
  CHECK(gnorm > 0);
}

TEST_CASE("models reject oversized sequences") {
  DyckModel<double> model{tiny_dyck_cfg()};
  DyckConfig dc;
  dc.seq_len = 8;
  dc.max_depth = 4;
  dc.n_train = 2;
  dc.n_test = 0;
  DyckData d = generate_dyck(dc);
  Batch b = make_dyck_batch(d.train, {0, 1});
  std::vector<double> theta = model.init(1);
  std::vector<double> grad(theta.size());
  CHECK_THROWS(model.loss_and_grad(theta.data(), b, grad.data()));
}

}  // TEST_SUITE
