#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smoa/adapter.hpp"
#include "smoa/backbone.hpp"
#include "smoa/synthetic.hpp"
#include "testing_util.hpp"

using namespace smoa;
using namespace smoa::testing;

namespace {

AdapterWeights zero_adapter(std::size_t width, std::size_t rank, Rng& rng) {
  AdapterWeights a;
  a.w_down = random_tensor({rank, width}, rng, 0.5, true);
  a.b_down = Tensor::zeros({rank}, true);
  a.w_up = Tensor::zeros({width, rank}, true);
  a.b_up = Tensor::zeros({width}, true);
  return a;
}

AdapterWeights rand_adapter(std::size_t width, std::size_t rank, Rng& rng) {
  AdapterWeights a;
  a.w_down = random_tensor({rank, width}, rng, 0.5, true);
  a.b_down = random_tensor({rank}, rng, 0.2, true);
  a.w_up = random_tensor({width, rank}, rng, 0.5, true);
  a.b_up = random_tensor({width}, rng, 0.2, true);
  return a;
}

}  // namespace

TEST_CASE("adapter_forward: zero up-projection is the identity") {
  Rng rng(11);
  AdapterWeights a = zero_adapter(6, 2, rng);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor y = adapter_forward(a, x);
  CHECK(max_abs_diff(x.values(), y.values()) == 0.0);
}

TEST_CASE("adapter_forward: hand-evaluated relu composition") {
  // d=2, r=1: down [1,0], relu, up [1;0], x=[2,3] -> [4,3].
  AdapterWeights a;
  a.w_down = Tensor::from({1, 2}, {1, 0});
  a.b_down = Tensor::zeros({1});
  a.w_up = Tensor::from({2, 1}, {1, 0});
  a.b_up = Tensor::zeros({2});
  Tensor y = adapter_forward(a, Tensor::from({1, 2}, {2, 3}), Sigma::Relu);
  CHECK(y.at({0, 0}) == 4.0);
  CHECK(y.at({0, 1}) == 3.0);
}

TEST_CASE("adapter_forward: all four weight tensors pass fd checks") {
  Rng rng(12);
  AdapterWeights a = rand_adapter(5, 2, rng);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor weights = random_tensor({4, 5}, rng);
  auto loss = [&] { return sum(mul(adapter_forward(a, x), weights)); };
  backward(loss());
  auto f = [&] {
    NoGradGuard ng;
    return loss().value();
  };
  CHECK(grad_vs_fd(f, a.w_down) < 1e-4);
  CHECK(grad_vs_fd(f, a.b_down) < 1e-4);
  CHECK(grad_vs_fd(f, a.w_up) < 1e-4);
  CHECK(grad_vs_fd(f, a.b_up) < 1e-4);
}

TEST_CASE("adapter dimension errors name the shapes") {
  Rng rng(13);
  AdapterWeights a = rand_adapter(5, 2, rng);
  CHECK_THROWS_WITH_AS(adapter_forward(a, Tensor::zeros({3, 4})), doctest::Contains("(3, 4)"),
                       ShapeError);
}

TEST_CASE("parallel_adapter_forward: inert cases and two-branch oracle") {
  Rng rng(14);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor ffn_out = random_tensor({3, 6}, rng);

  AdapterWeights a = rand_adapter(6, 2, rng);
  Tensor y0 = parallel_adapter_forward(a, x, ffn_out, 0.0);
  CHECK(max_abs_diff(y0.values(), ffn_out.values()) == 0.0);

  AdapterWeights z = zero_adapter(6, 2, rng);
  Tensor y1 = parallel_adapter_forward(z, x, ffn_out, 0.3);
  CHECK(max_abs_diff(y1.values(), ffn_out.values()) == 0.0);

  const double s = 0.45;
  Tensor y = parallel_adapter_forward(a, x, ffn_out, s);
  Tensor branch = adapter_core(a, x);
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(std::abs(y.values()[i] - (ffn_out.values()[i] + s * branch.values()[i])) < 1e-12);
}

TEST_CASE("moe_gate: uniform on orthogonal scores, exact two-expert case, oracle") {
  Tensor h = Tensor::row({1, 0});
  Tensor e_orth = Tensor::from({3, 2}, {0, 1, 0, -1, 0, 2});
  Tensor g = moe_gate(h, e_orth);
  for (double v : g.values()) CHECK(std::abs(v - 1.0 / 3.0) < 1e-12);

  Tensor e2 = Tensor::from({2, 2}, {std::log(3.0), 5.0, 0.0, 7.0});
  Tensor g2 = moe_gate(h, e2);
  CHECK(std::abs(g2.values()[0] - 0.75) < 1e-12);
  CHECK(std::abs(g2.values()[1] - 0.25) < 1e-12);

  Rng rng(15);
  Tensor hr = random_tensor({4}, rng);
  Tensor er = random_tensor({5, 4}, rng);
  Tensor gr = moe_gate(hr, er);
  double denom = 0.0;
  std::vector<double> scores(5);
  for (std::size_t i = 0; i < 5; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < 4; ++j) dot += hr.values()[j] * er.at({i, j});
    scores[i] = std::exp(dot);
    denom += scores[i];
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gr.values()[i] - scores[i] / denom) < 1e-12);

  CHECK_THROWS_AS(moe_gate(Tensor::zeros({3}), Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("moe_layer_forward: zero experts, singleton gate, weighted-sum oracle") {
  Rng rng(16);
  Tensor h = random_tensor({6}, rng);

  std::vector<AdapterWeights> zeros{zero_adapter(6, 2, rng), zero_adapter(6, 2, rng)};
  Tensor emb = random_tensor({2, 6}, rng);
  Tensor o = moe_layer_forward(h, zeros, emb);
  CHECK(max_abs_diff(o.values(), h.values()) == 0.0);

  std::vector<AdapterWeights> one{rand_adapter(6, 2, rng)};
  Tensor emb1 = random_tensor({1, 6}, rng);
  Tensor o1 = moe_layer_forward(h, one, emb1);
  Tensor expect1 = add(reshape(h, {1, 6}), adapter_core(one[0], reshape(h, {1, 6})));
  CHECK(max_abs_diff(o1.values(), expect1.values()) < 1e-15);

  std::vector<AdapterWeights> two{rand_adapter(6, 2, rng), rand_adapter(6, 3, rng)};
  Tensor emb2 = random_tensor({2, 6}, rng);
  Tensor o2 = moe_layer_forward(h, two, emb2);
  Tensor gates = moe_gate(h, emb2);
  Tensor row = reshape(h, {1, 6});
  for (std::size_t j = 0; j < 6; ++j) {
    double expect = h.values()[j];
    for (std::size_t i = 0; i < 2; ++i)
      expect += gates.values()[i] * adapter_core(two[i], row).values()[j];
    CHECK(std::abs(o2.values()[j] - expect) < 1e-12);
  }

  CHECK_THROWS_AS(moe_layer_forward(h, std::span<const AdapterWeights>{}, emb), ContractError);
}

TEST_CASE("moe gates are nonnegative and sum to one") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor h = random_tensor({5}, rng, 2.0);
    Tensor e = random_tensor({4, 5}, rng, 2.0);
    Tensor g = moe_gate(h, e);
    double s = 0.0;
    for (double v : g.values()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("per-block pools: no aliasing, 4x parameter count, matched init with shared") {
  ModelConfig cfg;
  cfg.peft_mode = PeftMode::MoaPerBlock;
  RunConfig rc{cfg, {}, {}};
  validate_config(rc);
  cfg = rc.model;
  Model per_block = build_model(cfg);
  REQUIRE(per_block.stack.block_pools.size() == cfg.depth);

  ModelConfig shared_cfg = cfg;
  shared_cfg.peft_mode = PeftMode::Smoa;
  Model shared = build_model(shared_cfg);

  auto pool_param_count = [](const std::vector<ParamInfo>& params) {
    std::size_t n = 0;
    for (const ParamInfo& p : params)
      if (p.bucket == Bucket::Experts || p.bucket == Bucket::Router ||
          p.bucket == Bucket::Embeddings)
        n += shape_size(p.shape);
    return n;
  };
  CHECK(pool_param_count(per_block.params) == cfg.depth * pool_param_count(shared.params));

  // Same seed: block 0's pool draws the same values the shared pool would.
  CHECK(max_abs_diff(per_block.stack.block_pools[0]->router.values(),
                     shared.stack.shared_pool->router.values()) == 0.0);

  // Mutating block 0's expert leaves block 1's behavior untouched.
  Rng rng(18);
  Tensor x = random_tensor({2, cfg.d_model}, rng);
  Tensor before = smoa_forward(*per_block.stack.block_pools[1], x, 1).first;
  auto w = per_block.stack.block_pools[0]->experts[0].w_up.mutable_values();
  for (double& v : w) v += 1.0;
  Tensor after = smoa_forward(*per_block.stack.block_pools[1], x, 1).first;
  CHECK(max_abs_diff(before.values(), after.values()) == 0.0);

  // Identical seeds: shared and per-block stacks produce identical step-0
  // logits (both reduce to the frozen backbone at init).
  TaskConfig tc;
  TaskData task = make_task(cfg, tc);
  Tensor batch = task.val.batch_range(0, 2);
  Model per_block2 = build_model(cfg);
  Tensor l1 = encode(per_block2, batch);
  Tensor l2 = encode(shared, batch);
  CHECK(max_abs_diff(l1.values(), l2.values()) == 0.0);
}
