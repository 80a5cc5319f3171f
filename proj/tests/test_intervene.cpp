#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "intervene.hpp"
#include "rng.hpp"

namespace {

using namespace gk;

double norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

// One 2x3 matrix at offset 1 inside a 8-float parameter vector, with an
// axis-aligned 2-dim basis over its 6 coordinates.
MatrixBases one_target() {
  MatrixBases mb;
  mb.names = {"blk.attn.w"};
  mb.offsets = {1};
  Basis b;
  b.p = 6;
  b.k = 2;
  b.cols.assign(12, 0.0);
  b.cols[0] = 1.0;      // e0
  b.cols[6 + 2] = 1.0;  // e2
  mb.bases.push_back(b);
  return mb;
}

}  // namespace

TEST_SUITE("intervene") {

TEST_CASE("condition names round-trip") {
  for (Condition c : {Condition::baseline, Condition::kick_1a,
                      Condition::noise_1a, Condition::project_1b,
                      Condition::penalty_1b}) {
    CHECK(condition_from_name(condition_name(c)) == c);
  }
  CHECK(std::string(condition_name(Condition::kick_1a)) == "kick_1a");
  CHECK(std::string(condition_name(Condition::project_1b)) == "project_1b");
  CHECK_THROWS(condition_from_name("quench_2c"));
}

TEST_CASE("kick moves theta by kappa times its norm") {
  std::vector<float> theta{3.0f, 0.0f, 4.0f, 0.0f};  // norm 5
  std::vector<float> before = theta;
  std::vector<std::vector<float>> deltas{{0.0f, 2.0f, 0.0f, 0.0f}};

  REQUIRE(apply_kick(theta.data(), 4, deltas, 0.01));
  std::vector<float> moved(4);
  for (int i = 0; i < 4; ++i) moved[size_t(i)] = theta[size_t(i)] - before[size_t(i)];
  CHECK(norm(moved) == doctest::Approx(0.05).epsilon(1e-6));

  // single sample: direction is delta/||delta||, sign-fixed positive
  CHECK(moved[1] == doctest::Approx(0.05f).epsilon(1e-6));
  CHECK(std::abs(moved[0]) < 1e-9);
  CHECK(std::abs(moved[2]) < 1e-9);
}

TEST_CASE("kick sign convention makes the top coordinate positive") {
  std::vector<float> theta{1.0f, 1.0f, 1.0f};
  std::vector<float> before = theta;
  // largest-magnitude coordinate is negative: u flips to make it positive
  std::vector<std::vector<float>> deltas{{0.3f, -0.9f, 0.1f}};
  REQUIRE(apply_kick(theta.data(), 3, deltas, 0.1));
  CHECK(theta[1] > before[1]);  // -0.9 flipped to +
  CHECK(theta[0] < before[0]);
}

TEST_CASE("kick with stacked deltas uses the dominant direction") {
  // two orthogonal samples, one much larger: u aligns with the larger
  std::vector<float> theta{0.0f, 0.0f, 2.0f};
  std::vector<std::vector<float>> deltas{
      {10.0f, 0.0f, 0.0f}, {10.0f, 0.0f, 0.0f}, {0.0f, 0.1f, 0.0f}};
  REQUIRE(apply_kick(theta.data(), 3, deltas, 0.5));
  CHECK(theta[0] == doctest::Approx(1.0).epsilon(1e-3));  // 0.5 * ||theta|| = 1
  CHECK(std::abs(theta[1]) < 0.02);
  CHECK(theta[2] == doctest::Approx(2.0).epsilon(1e-3));

  std::vector<float> untouched{1.0f, 2.0f};
  std::vector<std::vector<float>> zeros{{0.0f, 0.0f}, {0.0f, 0.0f}};
  CHECK_FALSE(apply_kick(untouched.data(), 2, zeros, 0.5));
  CHECK(untouched[0] == 1.0f);
  CHECK(untouched[1] == 2.0f);
}

TEST_CASE("noise hook fires on the period and stays orthogonal to the grad") {
  NoiseHook hook;
  hook.period = 10;
  hook.nu = 1.0;
  hook.rng = named_stream(3, "noise");

  // zero theta keeps the added displacement exactly recoverable in float
  std::vector<float> theta(64, 0.0f);
  std::vector<float> grad(64);
  Rng g = named_stream(5, "gradstream");
  for (float& v : grad) v = float(g.next_normal());

  // off-period: no change
  std::vector<float> before = theta;
  hook.apply(theta.data(), grad.data(), 64, 1e-3, 7);
  CHECK(theta == before);

  // on-period: displacement orthogonal to grad with norm nu * ||eta g||
  hook.apply(theta.data(), grad.data(), 64, 1e-3, 10);
  std::vector<float> disp(64);
  for (int i = 0; i < 64; ++i) disp[size_t(i)] = theta[size_t(i)] - before[size_t(i)];
  double dn = norm(disp);
  CHECK(dn == doctest::Approx(1e-3 * norm(grad)).epsilon(1e-5));
  CHECK(std::abs(dot(disp, grad)) / (dn * norm(grad)) < 1e-6);
  CHECK_FALSE(hook.flagged_zero_grad);

  // nu = 0 is the identity even on-period
  NoiseHook off;
  off.period = 10;
  off.nu = 0.0;
  off.rng = named_stream(3, "noise");
  before = theta;
  off.apply(theta.data(), grad.data(), 64, 1e-3, 20);
  CHECK(theta == before);
}

TEST_CASE("noise hook flags zero gradients and still perturbs") {
  NoiseHook hook;
  hook.period = 5;
  hook.nu = 0.5;
  hook.rng = named_stream(4, "noise");
  std::vector<float> theta(16, 0.0f);
  std::vector<float> zero(16, 0.0f);
  hook.apply(theta.data(), zero.data(), 16, 1e-3, 5);
  CHECK(hook.flagged_zero_grad);
  CHECK(norm(theta) > 0.0);
}

TEST_CASE("projection keeps in-span gradients and kills orthogonal ones") {
  MatrixBases mb = one_target();

  // gradient inside span{e0, e2} of the target block
  std::vector<float> g(8, 0.0f);
  g[0] = 9.0f;  // untargeted coordinate, must never change
  g[1] = 2.0f;  // block e0
  g[3] = -3.0f; // block e2
  g[7] = 4.0f;  // untargeted tail
  std::vector<float> in_span = g;
  apply_project(g.data(), 8, mb);
  CHECK(g == in_span);  // already in span: unchanged

  // orthogonal block components are zeroed
  std::vector<float> h(8, 0.0f);
  h[0] = 9.0f;
  h[2] = 5.0f;  // block e1
  h[5] = -2.0f; // block e4
  h[7] = 4.0f;
  apply_project(h.data(), 8, mb);
  CHECK(h[0] == 9.0f);
  CHECK(h[2] == 0.0f);
  CHECK(h[5] == 0.0f);
  CHECK(h[7] == 4.0f);

  // idempotent
  std::vector<float> mixed(8, 1.0f);
  apply_project(mixed.data(), 8, mb);
  std::vector<float> once = mixed;
  apply_project(mixed.data(), 8, mb);
  CHECK(mixed == once);
}

TEST_CASE("penalty interpolates between identity and projection") {
  MatrixBases mb = one_target();
  std::vector<float> base(8);
  for (int i = 0; i < 8; ++i) base[size_t(i)] = float(i + 1);

  std::vector<float> s0 = base;
  apply_penalty(s0.data(), 8, mb, 0.0);
  CHECK(s0 == base);

  std::vector<float> s1 = base;
  apply_penalty(s1.data(), 8, mb, 1.0);
  std::vector<float> proj = base;
  apply_project(proj.data(), 8, mb);
  for (int i = 0; i < 8; ++i) {
    CHECK(s1[size_t(i)] == doctest::Approx(proj[size_t(i)]).epsilon(1e-6));
  }

  // s = 0.5 halves the orthogonal component only
  std::vector<float> s5 = base;
  apply_penalty(s5.data(), 8, mb, 0.5);
  for (int i = 0; i < 8; ++i) {
    double par = double(proj[size_t(i)]);
    double perp = double(base[size_t(i)]) - par;
    CHECK(s5[size_t(i)] == doctest::Approx(par + 0.5 * perp).epsilon(1e-6));
  }
}

TEST_CASE("attention bases come from the archive's attention matrices") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "gk_intervene_bases";
  fs::remove_all(dir);
  std::vector<MatrixSpec> mats;
  mats.push_back({"layer0.attn.wq", 2, 3, 0});
  mats.push_back({"layer0.mlp.w_up", 2, 3, 6});
  mats.push_back({"dec0.self.wk", 2, 3, 12});
  mats.push_back({"dec0.cross.wv", 2, 3, 18});
  SnapshotArchive a = SnapshotArchive::create(dir.string(), "r", 10, mats);

  Rng rng = named_stream(6, "drift");
  std::vector<float> u(24);
  for (float& v : u) v = float(rng.next_normal());
  std::vector<float> flat(24);
  for (int s = 0; s < 5; ++s) {
    for (int i = 0; i < 24; ++i) {
      flat[size_t(i)] = float(s) * u[size_t(i)] + 0.01f * float(i);
    }
    a.record(flat.data(), s * 10);
  }

  MatrixBases mb = attention_trajectory_bases(a, 2);
  REQUIRE(mb.names.size() == 3);  // mlp matrix excluded
  CHECK(mb.names[0] == "layer0.attn.wq");
  CHECK(mb.names[1] == "dec0.self.wk");
  CHECK(mb.names[2] == "dec0.cross.wv");
  CHECK(mb.offsets[0] == 0);
  CHECK(mb.offsets[1] == 12);
  CHECK(mb.offsets[2] == 18);
  for (const Basis& b : mb.bases) {
    CHECK(b.p == 6);
    CHECK(b.k >= 1);
    CHECK(b.k <= 2);
  }

  // frozen archive: every basis degenerates, which is an error
  fs::path dir2 = fs::temp_directory_path() / "gk_intervene_frozen";
  fs::remove_all(dir2);
  SnapshotArchive frozen =
      SnapshotArchive::create(dir2.string(), "r", 10, mats);
  for (int s = 0; s < 4; ++s) frozen.record(flat.data(), s * 10);
  CHECK_THROWS(attention_trajectory_bases(frozen, 2));
}

TEST_CASE("dose_response isolates failing cells") {
  std::vector<InterventionSpec> grid;
  InterventionSpec a;
  a.condition = Condition::kick_1a;
  a.strength = 1e-2;
  InterventionSpec b;
  b.condition = Condition::project_1b;
  b.strength = 1.0;
  grid = {a, b};

  int calls = 0;
  DoseRunFn run = [&](const InterventionSpec& spec,
                      uint64_t seed) -> DoseCell {
    ++calls;
    if (spec.condition == Condition::project_1b && seed == 137) {
      throw std::runtime_error("disk full");
    }
    DoseCell cell;
    cell.condition = spec.condition;
    cell.strength = spec.strength;
    cell.seed = seed;
    cell.grok_step = 1000 + int64_t(seed);
    cell.onset_step = 300;
    return cell;
  };

  std::vector<DoseCell> cells = dose_response(grid, {42, 137}, run);
  CHECK(calls == 4);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].grok_step == 1042);
  CHECK_FALSE(cells[0].failed);

  int failed = 0;
  for (const DoseCell& c : cells) {
    if (!c.failed) continue;
    ++failed;
    CHECK(c.condition == Condition::project_1b);
    CHECK(c.seed == 137);
    CHECK(c.flags.find("disk full") != std::string::npos);
  }
  CHECK(failed == 1);
}

TEST_CASE("dose_csv prints the documented header and rows") {
  DoseCell ok;
  ok.condition = Condition::kick_1a;
  ok.strength = 0.01;
  ok.seed = 42;
  ok.grok_step = 2040;
  ok.onset_step = 400;
  DoseCell bad;
  bad.condition = Condition::noise_1a;
  bad.strength = 1.0;
  bad.seed = 137;
  bad.failed = true;
  bad.flags = "run_failed:boom";

  std::string csv = dose_csv({ok, bad});
  std::istringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "condition,strength,seed,grok_step,onset_step,flags");
  std::getline(ss, line);
  CHECK(line == "kick_1a,0.01,42,2040,400,");
  std::getline(ss, line);
  CHECK(line == "noise_1a,1,137,,,run_failed:boom");
}

}  // TEST_SUITE
