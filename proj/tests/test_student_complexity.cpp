#include <doctest.h>

#include "nettrim/complexity.hpp"
#include "nettrim/gradcheck.hpp"
#include "nettrim/oracles.hpp"
#include "nettrim/student.hpp"

#include <cmath>
#include <memory>

using namespace nettrim;

namespace {

std::shared_ptr<Backbone<double>> shared_backbone(std::uint64_t seed = 21) {
  return std::make_shared<Backbone<double>>(build_backbone<double>(default_plan(), seed));
}

TensorD random_images(std::int64_t n, Rng& rng) {
  TensorD x(Shape{n, 1, 28, 28});
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("gate softmax properties over 500 random graphs") {
  auto g = attach_proxies(shared_backbone(), 3, 2, 1);
  const auto every_path = all_paths(g.depth(), g.k);
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    // Random gate values and a random alive subset make a fresh graph.
    for (auto& [p, a] : g.a_params) a.data()[0] = rng.uniform(-6.0, 6.0);
    g.alive.clear();
    for (PathId p : every_path) {
      if (rng.uniform() < 0.7) g.alive.insert(p);
    }
    for (int l = 1; l <= g.depth(); ++l) {
      const auto paths = g.alive_incoming(l);
      if (paths.empty()) continue;
      const auto alphas = g.merge_alphas(l);
      REQUIRE(alphas.size() == paths.size());
      double sum = 0.0;
      for (const auto& [p, alpha] : alphas) {
        CHECK(alpha >= 0.0);
        CHECK(alpha <= 1.0);
        sum += alpha;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      if (paths.size() == 1) CHECK(alphas.begin()->second == 1.0);  // singleton: exact
    }
  }
}

TEST_CASE("gate softmax: equal parameters split evenly") {
  auto g = attach_proxies(shared_backbone(), 3, 2, 1);
  for (auto& [p, a] : g.a_params) a.data()[0] = 1.37;
  for (int l = 1; l <= g.depth(); ++l) {
    const auto alphas = g.merge_alphas(l);
    const double m = static_cast<double>(alphas.size());
    for (const auto& [p, alpha] : alphas) CHECK(std::abs(alpha - 1.0 / m) < 1e-15);
  }
}

TEST_CASE("all proxies masked dead: student reproduces the backbone") {
  Rng rng(31);
  SUBCASE("double precision") {
    auto backbone = shared_backbone(40);
    auto g = attach_proxies(backbone, 3, 2, 2);
    g.alive.clear();
    for (int l = 1; l <= g.depth(); ++l) g.alive.insert(PathId{l, l});
    TensorD x = random_images(2, rng);
    auto out = g.forward(x, /*training=*/false);
    auto want = backbone->node_activations(x, /*training=*/false);
    double max_diff = 0.0;
    for (int l = 1; l <= g.depth(); ++l) {
      const auto& a = out.nodes.at(l);
      const auto& b = want[static_cast<std::size_t>(l)];
      REQUIRE(a.shape() == b.shape());
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        max_diff = std::max(max_diff, std::abs(a.data()[i] - b.data()[i]));
      }
    }
    CHECK(max_diff < 1e-10);
  }
  SUBCASE("single precision") {
    auto backbone =
        std::make_shared<Backbone<float>>(build_backbone<float>(default_plan(), 40));
    auto g = attach_proxies(backbone, 3, 2, 2);
    g.alive.clear();
    for (int l = 1; l <= g.depth(); ++l) g.alive.insert(PathId{l, l});
    TensorF x(Shape{2, 1, 28, 28});
    for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(rng.uniform());
    auto out = g.forward(x, /*training=*/false);
    auto want = backbone->node_activations(x, /*training=*/false);
    double max_diff = 0.0;
    for (int l = 1; l <= g.depth(); ++l) {
      const auto& a = out.nodes.at(l);
      const auto& b = want[static_cast<std::size_t>(l)];
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        max_diff = std::max(max_diff, std::abs(static_cast<double>(a.data()[i]) -
                                               static_cast<double>(b.data()[i])));
      }
    }
    CHECK(max_diff < 1e-5);
  }
}

TEST_CASE("complexity table: normalization and proxy cheapness") {
  const BackbonePlan plan = default_plan();
  auto table = make_complexity_table(plan, 3);
  REQUIRE(table.C.size() == 26);
  double pretrained_sum = 0.0, min_pretrained = 1.0, max_proxy = 0.0;
  for (const auto& [p, c] : table.C) {
    CHECK(c > 0.0);
    if (p.pretrained()) {
      pretrained_sum += c;
      min_pretrained = std::min(min_pretrained, c);
    } else {
      max_proxy = std::max(max_proxy, c);
    }
  }
  // The table is normalized so the eight pre-trained entries sum to exactly 1;
  // an all-pre-trained network then has complexity 1 by construction.
  CHECK(pretrained_sum == 1.0);
  // Every proxy is at least an order of magnitude cheaper than any block.
  CHECK(max_proxy < 0.1 * min_pretrained);
  CHECK(table.total_flops == 14355232);
}

TEST_CASE("worked three-block configuration reproduces the derived values") {
  // L=3, k=1: paths G1, G2, A1_2, G3, A2_3 with uniform block cost 1/3 and
  // proxy cost 1/60; gates alpha_2^2=0.7, alpha_1^2=0.3, alpha_3^3=0.6,
  // alpha_2^3=0.4 (node 1 is a singleton merge, alpha_1^1=1).
  const int L = 3;
  const AliveSet alive{{1, 1}, {1, 2}, {2, 2}, {2, 3}, {3, 3}};
  RMap r;
  r[{1, 1}] = 0.0;
  r[{2, 2}] = 1.0 - 0.7;
  r[{1, 2}] = 1.0 - 0.3;
  r[{3, 3}] = 1.0 - 0.6;
  r[{2, 3}] = 1.0 - 0.4;
  ComplexityTable table;
  for (PathId p : alive) table.C[p] = p.pretrained() ? 1.0 / 3.0 : 1.0 / 60.0;

  // Direct evaluation: E = C * (1 - r_self - P_inp - P_out) with literal
  // products over the alive paths.
  const double p_out1 = r.at({2, 2}) * r.at({1, 2});  // 0.3 * 0.7
  const double p_inp2 = p_out1;
  const double p_out2 = r.at({3, 3}) * r.at({2, 3});  // 0.4 * 0.6
  const double p_inp3 = p_out2;
  const struct {
    PathId path;
    double want;
    double quoted;  // four-decimal reference values
  } cases[] = {
      {{1, 1}, (1.0 / 3.0) * (1.0 - 0.0 - 0.0 - p_out1), 0.2633},
      {{2, 2}, (1.0 / 3.0) * (1.0 - 0.3 - p_inp2 - p_out2), 0.0833},
      {{3, 3}, (1.0 / 3.0) * (1.0 - 0.4 - p_inp3 - 0.0), 0.1200},
      {{1, 2}, (1.0 / 60.0) * (1.0 - 0.7 - 0.0 - p_out2), 0.0010},
      {{2, 3}, (1.0 / 60.0) * (1.0 - 0.6 - p_inp2 - 0.0), 0.0032},
  };
  double want_total = 0.0;
  for (const auto& c : cases) {
    const double got = expected_block_complexity(table.C.at(c.path), r, alive, c.path, L);
    CHECK_MESSAGE(std::abs(got - c.want) < 1e-9, path_name(c.path));
    CHECK_MESSAGE(std::abs(got - c.quoted) < 5e-5, path_name(c.path));
    want_total += c.want;
  }
  CHECK(std::abs(expected_network_complexity(r, alive, table, L) - want_total) < 1e-9);

  // Per-path breakdown agrees with the individual evaluations.
  auto costs = expected_path_costs(r, alive, table, L);
  for (const auto& c : cases) CHECK(std::abs(costs.at(c.path) - c.want) < 1e-12);
}

TEST_CASE("all-pre-trained configuration has complexity exactly 1") {
  const BackbonePlan plan = default_plan();
  auto table = make_complexity_table(plan, 3);
  AliveSet alive;
  RMap r;
  for (int l = 1; l <= 8; ++l) {
    alive.insert(PathId{l, l});
    r[PathId{l, l}] = 0.0;  // singleton merges: alpha = 1 exactly
  }
  CHECK(expected_network_complexity(r, alive, table, 8) == 1.0);

  // The same holds end to end through a student whose proxies are masked dead.
  auto g = attach_proxies(shared_backbone(), 3, 2, 1);
  g.alive = alive;
  CHECK(expected_network_complexity(exclusion_r(g), g.alive, table, 8) == 1.0);
}

TEST_CASE("exclusion probabilities match their closed-form products") {
  // Hand-rolled check on a small graph: L=4, k=2.
  const int L = 4;
  AliveSet alive;
  for (PathId p : all_paths(L, 2)) alive.insert(p);
  RMap r;
  Rng rng(55);
  for (PathId p : alive) r[p] = rng.uniform(0.05, 0.95);

  // Node 3 receives G3, A1_3, A2_3.
  const double want_inp3 = r.at({3, 3}) * r.at({1, 3}) * r.at({2, 3});
  CHECK(input_exclusion_prob(r, alive, 3) == doctest::Approx(want_inp3).epsilon(1e-15));
  // Node 2's departures: G3 plus proxies (2,3) and (2,4).
  const double want_out2 = r.at({3, 3}) * r.at({2, 3}) * r.at({2, 4});
  CHECK(output_exclusion_prob(r, alive, 2, L) == doctest::Approx(want_out2).epsilon(1e-15));
  // Boundaries: the network input and the classifier node are never excluded.
  CHECK(input_exclusion_prob(r, alive, 0) == 0.0);
  CHECK(output_exclusion_prob(r, alive, L, L) == 0.0);

  // Dead paths are certain exclusions: their factors drop out.
  AliveSet partial = alive;
  partial.erase(PathId{1, 3});
  CHECK(input_exclusion_prob(r, partial, 3) ==
        doctest::Approx(r.at({3, 3}) * r.at({2, 3})).epsilon(1e-15));

  CHECK_THROWS_AS(expected_block_complexity(0.1, r, alive, PathId{1, 99}, L),
                  std::invalid_argument);
  RMap bad = r;
  bad[{2, 2}] = 1.5;
  CHECK_THROWS_AS(input_exclusion_prob(bad, alive, 2), std::invalid_argument);
}

TEST_CASE("union-probability oracle: the additive form overcounts, never under") {
  const int L = 4;
  AliveSet alive;
  for (PathId p : all_paths(L, 2)) alive.insert(p);
  Rng rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    RMap r;
    for (PathId p : alive) r[p] = rng.uniform(0.0, 1.0);
    for (PathId p : alive) {
      auto res = union_prob_oracle(r, alive, p, L);
      CHECK(res.true_union >= -1e-12);
      CHECK(res.true_union <= 1.0 + 1e-12);
      // Union bound: the implemented sum is an upper bound on the true union
      // probability. The magnitude of the gap is reported, not asserted.
      CHECK(res.gap >= -1e-12);
      CHECK(res.approx == doctest::Approx(res.true_union + res.gap).epsilon(1e-12));
    }
  }

  // Monte-Carlo agrees with exact enumeration within sampling noise.
  RMap r;
  Rng rng2(67);
  for (PathId p : alive) r[p] = rng2.uniform(0.1, 0.9);
  auto exact = union_prob_oracle(r, alive, PathId{2, 2}, L);
  auto mc = union_prob_oracle(r, alive, PathId{2, 2}, L, {}, /*monte_carlo=*/true, 1000000);
  CHECK(std::abs(exact.true_union - mc.true_union) < 3e-3);
  CHECK_THROWS_AS(union_prob_oracle(r, alive, PathId{2, 2}, L, {}, true, 1000),
                  std::invalid_argument);
}

TEST_CASE("traced complexity equals the plain evaluation and is differentiable") {
  auto g = attach_proxies(shared_backbone(), 3, 2, 8);
  auto table = make_complexity_table(g.backbone->plan, g.k);
  Rng rng(77);

  for (int trial = 0; trial < 10; ++trial) {
    for (auto& [p, a] : g.a_params) a.data()[0] = rng.uniform(-3.0, 3.0);
    const double plain = expected_network_complexity(exclusion_r(g), g.alive, table, g.depth());
    const double traced = expected_network_complexity_traced(g, table).item();
    CHECK(std::abs(plain - traced) < 1e-12);
  }

  // d E[C] / d a through the tape matches finite differences.
  std::vector<TensorD> gates;
  for (auto& [p, a] : g.a_params) gates.push_back(a);
  auto rep = grad_check<double>(
      [&] { return expected_network_complexity_traced(g, table); }, gates);
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);

  // Gate pressure exists: at the standard initialization the complexity
  // penalty pushes some gradient into every merge with a proxy alternative.
  for (auto& [p, a] : g.a_params) {
    a.data()[0] = p.pretrained() ? 2.0 : -2.0;
    a.zero_grad();
  }
  {
    ComputeGraph<double> tape;
    auto ec = expected_network_complexity_traced(g, table);
    CHECK(ec.item() > 0.0);
    CHECK(ec.item() < 1.0);  // proxies already bleed probability off the blocks
    tape.backward(ec);
  }
  int nonzero = 0;
  for (auto& [p, a] : g.a_params) {
    if (std::abs(a.grad_data()[0]) > 0.0) ++nonzero;
  }
  // Node 1 is a singleton merge: its gate is pinned at alpha = 1 and gets no
  // gradient. Every other gate participates.
  CHECK(nonzero == 25);
}
