// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "physkit/error.hpp"
#include "physkit/pipeline.hpp"
#include "physkit/rng.hpp"

using namespace physkit;
using namespace physkit::pipeline;

namespace {

Sample random_sample(const ModelConfig& cfg, Rng& rng) {
  Sample s;
  s.x_enc.resize(cfg.frames);
  for (double& v : s.x_enc) v = rng.normal();
  for (const auto& l : cfg.levels) s.pyramid.levels.push_back(Tensor::randn({1, cfg.frames, l.height, l.width}, rng));
  return s;
}

std::vector<Example> random_examples(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e{random_sample(cfg, rng), {}};
    e.target.resize(cfg.frames);
    for (double& v : e.target) v = rng.normal();
    out.push_back(std::move(e));
  }
  return out;
}

bool same_values(const ParamStore& a, const ParamStore& b) {
  for (const auto& [name, p] : a) {
    if (!(p.value == b.get(name).value)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("tiny forward shapes and token count") {
  const ModelConfig cfg = ModelConfig::tiny();
  for (HeadKind head : {HeadKind::per_token, HeadKind::mean_pool}) {
    ModelConfig c = cfg;
    c.head = head;
    PhysModel model(c, 1);
    Rng rng(2);
    const Sample a = random_sample(c, rng), b = random_sample(c, rng), s3 = random_sample(c, rng);
    const Sample* batch[] = {&a, &b, &s3};
    Tape tape;
    ForwardTrace tr;
    const Var y = model.forward(tape, batch, &tr);
    CHECK(y.shape() == Shape{3, c.frames});
    CHECK(tr.signal_tokens == Shape{3, c.signal_tokens(), c.dim});
    CHECK(tr.t_signal == Shape{3, c.prototypes, c.dim});
    CHECK(tr.t_vision == Shape{3, c.prototypes, c.dim});
    CHECK(tr.t_cue == Shape{3, c.prompt_len, c.dim});
    CHECK(tr.lm_input == Shape{3, c.lm_tokens(), c.dim});
    CHECK(c.lm_tokens() == c.prompt_len + 2 * c.prototypes);
    CHECK(tr.dds.size() == 3);
    CHECK(y.value().all_finite());
  }
}

TEST_CASE("model construction and inference are deterministic") {
  const ModelConfig cfg = ModelConfig::tiny();
  PhysModel m1(cfg, 5), m2(cfg, 5), m3(cfg, 6);
  CHECK(same_values(m1.store(), m2.store()));
  CHECK_FALSE(same_values(m1.store(), m3.store()));
  Rng rng(7);
  const Sample s = random_sample(cfg, rng);
  CHECK(m1.predict(s) == m2.predict(s));
  CHECK(m1.predict(s) == m1.predict(s));
  CHECK(m1.predict(s).size() == cfg.frames);
}

TEST_CASE("default configuration is consistent") {
  const ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.signal_tokens() == 15);
  CHECK(cfg.lm_tokens() == 16 + 128);
  ModelConfig bad = cfg;
  bad.prototypes = 300;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.patch = 200;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("mse loss examples") {
  Tape tape;
  const Var l = mse_loss(tape.constant(Tensor({2}, std::vector<double>{0, 2})),
                         tape.constant(Tensor({2}, std::vector<double>{1, 1})));
  CHECK(l.value().item() == 1.0);
  const Var z = mse_loss(tape.constant(Tensor({3}, 4.0)), tape.constant(Tensor({3}, 4.0)));
  CHECK(z.value().item() == 0.0);
  CHECK_THROWS_AS(mse_loss(tape.constant(Tensor({3})), tape.constant(Tensor({2}))), ShapeError);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const ModelConfig cfg = ModelConfig::tiny();
  PhysModel model(cfg, 8);
  PhysModel ref(cfg, 8);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.weight_decay = 0.0;
  tc.steps = 3;
  tc.batch = 2;
  const TrainLog log = train(model, random_examples(cfg, 4, 9), tc);
  CHECK(log.losses.size() == 3);
  CHECK(same_values(model.store(), ref.store()));
}

TEST_CASE("training is reproducible and lowers the loss on a tiny set") {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto data = random_examples(cfg, 4, 10);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.steps = 30;
  tc.batch = 2;
  tc.window = 5;
  tc.seed = 11;
  PhysModel a(cfg, 12), b(cfg, 12);
  const TrainLog la = train(a, data, tc);
  const TrainLog lb = train(b, data, tc);
  CHECK(la.losses == lb.losses);
  CHECK(same_values(a.store(), b.store()));
  CHECK(la.final_running_loss < la.initial_running_loss);
  CHECK(a.store().get(PhysModel::kVocab).value == PhysModel(cfg, 12).store().get(PhysModel::kVocab).value);
  CHECK_THROWS_AS(train(a, {}, tc), ContractError);
}

TEST_CASE("frozen vocabulary gets zero gradient through the full model") {
  const ModelConfig cfg = ModelConfig::tiny();
  PhysModel model(cfg, 13);
  Rng rng(14);
  const Sample s = random_sample(cfg, rng);
  const Sample* batch[] = {&s};
  Tape tape;
  const Var loss = mse(model.forward(tape, batch), tape.constant(Tensor::randn({1, cfg.frames}, rng)));
  backward(loss, model.store());
  for (double g : model.store().get(PhysModel::kVocab).grad.data()) CHECK(g == 0.0);
  double beta_grad = model.store().get(PhysModel::kBetaRaw).grad[0];
  CHECK(beta_grad != 0.0);
}

TEST_CASE("errors name the failing stage") {
  const ModelConfig cfg = ModelConfig::tiny();
  PhysModel model(cfg, 15);
  Rng rng(16);
  Sample s = random_sample(cfg, rng);
  s.x_enc.pop_back();
  const Sample* batch[] = {&s};
  Tape tape;
  try {
    model.forward(tape, batch);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).rfind("dds:", 0) == 0);
  }
  Sample p = random_sample(cfg, rng);
  p.pyramid.levels[0] = Tensor({1, cfg.frames, 3, 4});
  const Sample* batch2[] = {&p};
  try {
    model.forward(tape, batch2);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).rfind("aggregator:", 0) == 0);
  }
  CHECK_THROWS_AS(model.forward(tape, std::span<const Sample* const>{}), ContractError);
}

TEST_CASE("synthetic clips feed the default model") {
  signal::SynthConfig sc;
  const auto clips = make_clips(3, sc, 17);
  CHECK(clips.size() == 3);
  for (const auto& c : clips) {
    CHECK(c.hr_bpm >= 45.0);
    CHECK(c.hr_bpm <= 150.0);
  }
  const auto again = make_clips(3, sc, 17);
  CHECK(again[2].bvp == clips[2].bvp);
  const auto ex = to_examples(clips);
  CHECK(ex[0].target == clips[0].bvp);
  PhysModel model(ModelConfig{}, 18);
  CHECK(model.predict(ex[0].input).size() == 128);
}

TEST_CASE("gradcheck suite covers every module") {
  const auto checks = gradcheck_suite(19);
  REQUIRE(checks.size() == 5);
  const char* names[] = {"dds", "aggregator", "tpg", "cue", "pipeline"};
  for (std::size_t i = 0; i < 5; ++i) {
    CAPTURE(names[i]);
    CHECK(checks[i].module == names[i]);
    CHECK(checks[i].result.checked > 0);
    CHECK(checks[i].result.max_rel_error < 1e-4);
  }
}
