// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "physkit/error.hpp"
#include "physkit/gradcheck.hpp"
#include "physkit/tpg.hpp"

using namespace physkit;
using namespace physkit::tpg;

namespace {

TpgConfig small() {
  TpgConfig c;
  c.vocab = 64;
  c.dim = 8;
  c.prototypes = 8;
  c.heads = 2;
  return c;
}

struct Fixture {
  ParamStore store;
  std::unique_ptr<TextPrototypeGuidance> tpg;
  explicit Fixture(std::uint64_t seed, TpgConfig c = small()) {
    Rng rng(seed);
    store.add("vocab", Tensor::randn({c.vocab, c.dim}, rng), false);
    tpg = std::make_unique<TextPrototypeGuidance>(store, "tpg", "vocab", c, rng);
  }
};

}  // namespace

TEST_CASE("derive_prototypes: selection, zero, oracle, bound") {
  Rng rng(1);
  const Tensor e = Tensor::randn({16, 3}, rng);
  Tensor onehot({2, 16});
  onehot.at({0, 5}) = 1.0;
  onehot.at({1, 11}) = 1.0;
  const Tensor sel = derive_prototypes(e, onehot);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(sel.at({0, c}) == e.at({5, c}));
    CHECK(sel.at({1, c}) == e.at({11, c}));
  }
  const Tensor zero = derive_prototypes(e, Tensor({4, 16}));
  for (double v : zero.data()) CHECK(v == 0.0);
  const Tensor w = Tensor::randn({4, 16}, rng);
  CHECK(testutil::max_diff(derive_prototypes(e, w).vec(), testutil::dense_matmul(w.vec(), e.vec(), 4, 16, 3)) < 1e-12);
  CHECK_THROWS_AS(derive_prototypes(e, Tensor({5, 16})), ContractError);
  CHECK_THROWS_AS(derive_prototypes(e, Tensor({2, 15})), ShapeError);
}

TEST_CASE("resample matrix rows are convex weights") {
  for (std::size_t in : {1u, 5u, 15u, 64u, 200u}) {
    const Tensor m = resample_matrix(8, in);
    for (std::size_t r = 0; r < 8; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < in; ++c) {
        CHECK(m.at({r, c}) >= 0.0);
        s += m.at({r, c});
      }
      CHECK(std::abs(s - 1.0) < 1e-14);
    }
  }
  CHECK(resample_matrix(6, 6) == Tensor::eye(6));
}

TEST_CASE("construction contracts") {
  ParamStore store;
  Rng rng(2);
  store.add("trainable_vocab", Tensor({64, 8}));
  CHECK_THROWS_AS(TextPrototypeGuidance(store, "a", "trainable_vocab", small(), rng), ContractError);
  store.add("vocab", Tensor({64, 8}), false);
  TpgConfig big = small();
  big.prototypes = 17;
  CHECK_THROWS_AS(TextPrototypeGuidance(store, "b", "vocab", big, rng), ContractError);
  TpgConfig wrong = small();
  wrong.dim = 4;
  CHECK_THROWS_AS(TextPrototypeGuidance(store, "c", "vocab", wrong, rng), ShapeError);
}

TEST_CASE("output always has V' tokens") {
  Fixture fx(3);
  Rng rng(4);
  for (std::size_t l : {1u, 16u, 32u, 128u}) {
    Tape tape;
    const Var out = fx.tpg->reprogram(tape, fx.store, tape.constant(Tensor::randn({2, l, 8}, rng)));
    CHECK(out.shape() == Shape{2, 8, 8});
  }
  Tape tape;
  CHECK_THROWS_AS(fx.tpg->reprogram(tape, fx.store, tape.constant(Tensor({2, 4, 5}))), ShapeError);
}

TEST_CASE("zero input collapses to FFN of the prototypes") {
  Fixture fx(5);
  Tape tape;
  const Var out = fx.tpg->reprogram(tape, fx.store, tape.constant(Tensor({3, 7, 8})));
  const auto protos = fx.tpg->prototypes(tape, fx.store).value();
  const auto w1 = fx.store.get("tpg.ffn.w1").value.vec();
  const auto w2 = fx.store.get("tpg.ffn.w2").value.vec();
  auto h = testutil::dense_matmul(protos.vec(), w1, 8, 8, 32);
  for (double& v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const auto ref = testutil::dense_matmul(h, w2, 8, 32, 8);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> got(out.value().data().begin() + b * 64, out.value().data().begin() + (b + 1) * 64);
    CHECK(testutil::max_diff(got, ref) < 1e-12);
  }
}

TEST_CASE("both modalities share every parameter") {
  Fixture fx(6);
  Rng rng(7);
  const std::size_t before = fx.store.size();
  Tape tape;
  const Var a = fx.tpg->reprogram(tape, fx.store, tape.constant(Tensor::randn({1, 15, 8}, rng)));
  const std::size_t nodes_after_first = tape.size();
  const Var b = fx.tpg->reprogram(tape, fx.store, tape.constant(Tensor::randn({1, 4, 8}, rng)));
  CHECK(fx.store.size() == before);
  const Var parts[] = {a, b};
  backward(sum(concat(parts, 1)), fx.store);
  // A parameter bound twice maps to one node, so the second call adds no
  // parameter leaves: every name resolves to the same node id.
  std::set<std::size_t> ids;
  for (auto& [name, p] : fx.store) ids.insert(tape.param(p).id());
  CHECK(ids.size() == fx.store.size());
  for (auto& [name, p] : fx.store) CHECK(tape.param(p).id() < nodes_after_first);
}

TEST_CASE("gradients: vocabulary frozen, everything else trained") {
  Fixture fx(8);
  Rng rng(9);
  const Tensor x = Tensor::randn({2, 6, 8}, rng);
  const Tensor target = Tensor::randn({2, 8, 8}, rng);
  const ScalarFn f = [&](Tape& t) { return mse(fx.tpg->reprogram(t, fx.store, t.constant(x)), t.constant(target)); };
  CHECK(grad_check(f, fx.store).max_rel_error < 1e-4);
  Tape tape;
  backward(f(tape), fx.store);
  for (double g : fx.store.get("vocab").grad.data()) CHECK(g == 0.0);
  for (const char* n : {"tpg.probe", "tpg.adapter", "tpg.self.wq", "tpg.cross.wv", "tpg.ffn.w1"}) {
    double norm = 0;
    for (double g : fx.store.get(n).grad.data()) norm += g * g;
    CAPTURE(n);
    CHECK(norm > 0.0);
  }
}
