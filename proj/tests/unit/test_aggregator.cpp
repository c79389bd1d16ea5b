// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"
#include "physkit/aggregator.hpp"
#include "physkit/error.hpp"
#include "physkit/gradcheck.hpp"

using namespace physkit;
using namespace physkit::aggregator;

namespace {

AggregatorConfig small_config() {
  AggregatorConfig c;
  c.levels = {{4, 4}, {3, 2}, {2, 2}};
  c.frames = 16;
  c.l_target = 4;
  c.dim = 8;
  c.heads = 2;
  return c;
}

FeaturePyramid random_pyramid(const AggregatorConfig& c, std::size_t b, Rng& rng) {
  FeaturePyramid p;
  for (const auto& l : c.levels) p.levels.push_back(Tensor::randn({b, c.frames, l.height, l.width}, rng));
  return p;
}

void set_param(ParamStore& s, const std::string& name, double v) { s.get(name).value.fill(v); }

}  // namespace

TEST_CASE("projection: zero input, token count, linearity") {
  ParamStore store;
  Rng rng(1);
  AggregatorConfig c = small_config();
  c.frames = 128;
  c.l_target = 32;
  const VisionAggregator agg(store, "agg", c, rng);
  Tape tape;
  const Tensor zero({2, 128, 4, 4});
  const Var pz = agg.project_level(tape, store, 0, zero);
  CHECK(pz.shape() == Shape{2, 32, 8});
  for (double v : pz.value().data()) CHECK(v == 0.0);

  const Tensor f = Tensor::randn({2, 128, 4, 4}, rng);
  Tensor f3 = f;
  for (double& v : f3.data()) v *= 3.0;
  const Tensor a = agg.project_level(tape, store, 0, f).value();
  const Tensor b = agg.project_level(tape, store, 0, f3).value();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(b[i] - 3.0 * a[i]) < 1e-12);

  CHECK_THROWS_AS(agg.project_level(tape, store, 0, Tensor({2, 128, 3, 3})), ShapeError);
  CHECK_THROWS_AS(agg.project_level(tape, store, 7, f), ShapeError);
}

TEST_CASE("time axis kept when compression is off") {
  ParamStore store;
  Rng rng(2);
  AggregatorConfig c = small_config();
  c.compress_time = false;
  const VisionAggregator agg(store, "agg", c, rng);
  Tape tape;
  CHECK(agg.aggregate(tape, store, random_pyramid(c, 1, rng)).shape() == Shape{1, 16, 8});
  CHECK_FALSE(store.contains("agg.level0.temporal"));
}

TEST_CASE("gate identities") {
  ParamStore store;
  Rng rng(3);
  const AggregatorConfig c = small_config();
  const VisionAggregator agg(store, "agg", c, rng);
  const FeaturePyramid pyr = random_pyramid(c, 2, rng);

  {
    Tape tape;
    AggregateTrace tr;
    const Tensor out = agg.aggregate(tape, store, pyr, &tr).value();
    CHECK(out.shape() == Shape{2, 4, 8});
    CHECK(out == tr.projected.back());
  }
  {
    set_param(store, "agg.gamma1", 0.0);
    set_param(store, "agg.gamma2", 1.0);
    Tape tape;
    AggregateTrace tr;
    const Tensor out = agg.aggregate(tape, store, pyr, &tr).value();
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == tr.projected.back()[i] + tr.cross[i]);
  }
}

TEST_CASE("composition matches the dense oracle") {
  ParamStore store;
  Rng rng(4);
  AggregatorConfig c = small_config();
  c.heads = 1;
  const VisionAggregator agg(store, "agg", c, rng);
  store.get("agg.gamma1").value = Tensor::randn({8}, rng);
  store.get("agg.gamma2").value = Tensor::randn({8}, rng);
  const FeaturePyramid pyr = random_pyramid(c, 1, rng);
  Tape tape;
  AggregateTrace tr;
  const Tensor out = agg.aggregate(tape, store, pyr, &tr).value();

  auto W = [&](const std::string& n) { return store.get(n).value.vec(); };
  std::vector<std::vector<double>> proj;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t hw = c.levels[l].height * c.levels[l].width;
    const std::string p = "agg.level" + std::to_string(l);
    const auto ch = testutil::dense_matmul(pyr.levels[l].vec(), W(p + ".spatial"), c.frames, hw, 8);
    proj.push_back(testutil::dense_matmul(W(p + ".temporal"), ch, c.l_target, c.frames, 8));
  }
  std::vector<double> shallow = proj[0];
  shallow.insert(shallow.end(), proj[1].begin(), proj[1].end());
  const auto cross = testutil::dense_attention(proj[2], 4, shallow, 8, W("agg.cross.wq"), W("agg.cross.wk"),
                                               W("agg.cross.wv"), W("agg.cross.wo"), 8);
  const auto self = testutil::dense_attention(cross, 4, cross, 4, W("agg.self.wq"), W("agg.self.wk"), W("agg.self.wv"),
                                              W("agg.self.wo"), 8);
  const auto g1 = W("agg.gamma1"), g2 = W("agg.gamma2");
  std::vector<double> ref(32);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t d = 0; d < 8; ++d) {
      const std::size_t i = t * 8 + d;
      ref[i] = proj[2][i] + g2[d] * (cross[i] + g1[d] * self[i]);
    }
  }
  CHECK(testutil::max_diff(out.vec(), ref) < 1e-12);
}

TEST_CASE("errors") {
  ParamStore store;
  Rng rng(5);
  AggregatorConfig one = small_config();
  one.levels = {{2, 2}};
  CHECK_THROWS_AS(VisionAggregator(store, "x", one, rng), ContractError);
  const AggregatorConfig c = small_config();
  const VisionAggregator agg(store, "agg", c, rng);
  Tape tape;
  FeaturePyramid single;
  single.levels.push_back(Tensor({1, 16, 4, 4}));
  CHECK_THROWS_AS(agg.aggregate(tape, store, single), ContractError);
  FeaturePyramid two = random_pyramid(c, 1, rng);
  two.levels.pop_back();
  CHECK_THROWS_AS(agg.aggregate(tape, store, two), ShapeError);
}

TEST_CASE("gradients reach gates, projections and attention") {
  ParamStore store;
  Rng rng(6);
  const AggregatorConfig c = small_config();
  const VisionAggregator agg(store, "agg", c, rng);
  store.get("agg.gamma1").value = Tensor::randn({8}, rng, 0.5);
  store.get("agg.gamma2").value = Tensor::randn({8}, rng, 0.5);
  const FeaturePyramid pyr = random_pyramid(c, 2, rng);
  const Tensor target = Tensor::randn({2, 4, 8}, rng);
  const ScalarFn f = [&](Tape& t) { return mse(agg.aggregate(t, store, pyr), t.constant(target)); };
  const GradCheckResult r = grad_check(f, store);
  CHECK(r.max_rel_error < 1e-4);
  Tape tape;
  backward(f(tape), store);
  for (const char* n : {"agg.gamma1", "agg.gamma2", "agg.level0.spatial", "agg.level1.temporal", "agg.cross.wk",
                        "agg.self.wo"}) {
    CAPTURE(n);
    double norm = 0;
    for (double g : store.get(n).grad.data()) norm += g * g;
    CHECK(norm > 0.0);
  }
}
