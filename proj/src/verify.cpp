#include "nettrim/verify.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "nettrim/checkpoint.hpp"
#include "nettrim/complexity.hpp"
#include "nettrim/datagen.hpp"
#include "nettrim/gradcheck.hpp"
#include "nettrim/oracles.hpp"
#include "nettrim/pruner.hpp"
#include "nettrim/student.hpp"
#include "nettrim/trainer.hpp"

namespace nettrim {

namespace {

using TD = Tensor<double>;

BackbonePlan tiny_plan() {
  BackbonePlan plan;
  plan.input_channels = 1;
  plan.input_size = 16;
  plan.channels = {4, 4, 8, 8};
  plan.num_classes = 3;
  plan.validate();
  return plan;
}

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from relu/maxpool kinks so central differences behave.
TD random_offset_tensor(Shape shape, Rng& rng) {
  TD t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.2, 1.0);
    t.data()[i] = rng.next_u64() & 1 ? mag : -mag;
  }
  return t;
}

// ---- group: ops-gradcheck ---------------------------------------------------

VerifyResult verify_ops_gradcheck() {
  VerifyResult res{"ops-gradcheck", false, ""};
  Rng rng(20240811);
  double worst = 0.0;
  std::string worst_op;
  auto track = [&](const std::string& op, const GradCheckReport& rep) {
    if (rep.max_rel_err > worst) {
      worst = rep.max_rel_err;
      worst_op = op + " " + rep.worst;
    }
  };

  {  // conv2d, strided + padded, with bias
    auto x = random_tensor({2, 3, 5, 5}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    for (auto* t : {&x, &w, &b}) t->set_requires_grad(true);
    track("conv2d", grad_check([&] { return sum(conv2d(x, w, b, {2, 1})); },
                               std::vector<TD>{x, w, b}));
  }
  {  // linear
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({4}, rng);
    for (auto* t : {&x, &w, &b}) t->set_requires_grad(true);
    track("linear", grad_check([&] { return sum_of_squares(linear(x, w, b)); },
                               std::vector<TD>{x, w, b}));
  }
  {  // batchnorm2d in both modes
    auto x = random_tensor({3, 2, 4, 4}, rng);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    for (auto* t : {&x, &gamma, &beta}) t->set_requires_grad(true);
    BatchNormState bn;
    TD rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
    track("batchnorm-train", grad_check(
                                 [&] {
                                   TD m = rm.clone(), v = rv.clone();
                                   return sum_of_squares(
                                       batchnorm2d(x, gamma, beta, m, v, true, bn));
                                 },
                                 std::vector<TD>{x, gamma, beta}));
    TD rm2 = random_tensor({2}, rng), rv2 = random_tensor({2}, rng, 0.5, 2.0);
    track("batchnorm-eval",
          grad_check(
              [&] { return sum_of_squares(batchnorm2d(x, gamma, beta, rm2, rv2, false, bn)); },
              std::vector<TD>{x, gamma, beta}));
  }
  {  // maxpool2d, ceil mode with clipped windows
    auto x = random_offset_tensor({2, 2, 5, 5}, rng);
    x.set_requires_grad(true);
    track("maxpool2d",
          grad_check([&] { return sum(maxpool2d(x, {2, 2, true})); }, std::vector<TD>{x}));
  }
  {  // global average pool + relu
    auto x = random_offset_tensor({2, 3, 4, 4}, rng);
    x.set_requires_grad(true);
    track("gap-relu",
          grad_check([&] { return sum(global_avg_pool(relu(x))); }, std::vector<TD>{x}));
  }
  {  // softmax / pick / prod / sub / mul / reshape / scale_const
    auto a = random_tensor({5}, rng);
    auto b = random_tensor({5}, rng, 0.2, 1.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    track("softmax-pick", grad_check(
                              [&] {
                                auto s = softmax(a);
                                return mul(pick(s, 1), pick(s, 3));
                              },
                              std::vector<TD>{a}));
    track("prod", grad_check([&] { return prod(b); }, std::vector<TD>{b}));
    track("mix", grad_check(
                     [&] {
                       auto c = mul(sub(a, b), b);
                       auto r = reshape(c, {5, 1});
                       return scale_const(sum_of_squares(r), 0.37);
                     },
                     std::vector<TD>{a, b}));
  }
  {  // scale by a traced scalar
    auto x = random_tensor({2, 3}, rng);
    auto s = random_tensor({}, rng, 0.3, 0.9);
    x.set_requires_grad(true);
    s.set_requires_grad(true);
    track("scale",
          grad_check([&] { return sum_of_squares(scale(x, s)); }, std::vector<TD>{x, s}));
  }
  {  // log-softmax + cross-entropy
    auto logits = random_tensor({4, 3}, rng);
    logits.set_requires_grad(true);
    std::vector<std::int64_t> labels{0, 2, 1, 2};
    track("cross-entropy",
          grad_check([&] { return cross_entropy(logits, labels); }, std::vector<TD>{logits}));
    track("log-softmax", grad_check([&] { return sum_of_squares(log_softmax(logits)); },
                                    std::vector<TD>{logits}));
  }
  res.pass = worst < 1e-4;
  std::ostringstream os;
  os << "max rel err " << worst;
  if (!res.pass) os << " at " << worst_op;
  res.detail = os.str();
  return res;
}

// ---- group: complexity-grad -------------------------------------------------

VerifyResult verify_complexity_grad() {
  VerifyResult res{"complexity-grad", false, ""};
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny_plan(), 11));
  auto g = attach_proxies<double>(backbone, 2, 3, 12);
  Rng rng(13);
  for (auto& [p, a] : g.a_params) a.data()[0] = rng.uniform(-2.0, 2.0);
  ComplexityTable table = make_complexity_table(tiny_plan(), 2);
  std::vector<TD> params;
  for (auto& [p, a] : g.a_params) params.push_back(a);
  auto rep_full =
      grad_check([&] { return expected_network_complexity_traced(g, table); }, params);
  // Same check on a pruned graph (mass redistributes over survivors).
  g.alive.erase(PathId{1, 2});
  g.alive.erase(PathId{2, 2});
  std::vector<TD> alive_params;
  for (auto& [p, a] : g.a_params) {
    if (g.alive.count(p)) alive_params.push_back(a);
  }
  auto rep_pruned =
      grad_check([&] { return expected_network_complexity_traced(g, table); }, alive_params);
  const double worst = std::max(rep_full.max_rel_err, rep_pruned.max_rel_err);
  res.pass = worst < 1e-4;
  std::ostringstream os;
  os << "max rel err " << worst;
  res.detail = os.str();
  return res;
}

// ---- group: gate-softmax ----------------------------------------------------

VerifyResult verify_gate_softmax() {
  VerifyResult res{"gate-softmax", false, ""};
  BackbonePlan plan;
  plan.input_channels = 1;
  plan.input_size = 16;
  plan.channels = {2, 2, 2, 2, 2, 2, 2, 2};
  plan.num_classes = 2;
  plan.validate();
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(plan, 21));
  Rng rng(22);
  double worst_sum_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform_u64(4));
    auto g = attach_proxies<double>(backbone, k, 2, 100 + static_cast<std::uint64_t>(trial));
    for (auto& [p, a] : g.a_params) a.data()[0] = rng.uniform(-6.0, 6.0);
    // Random prune that keeps the chain alive.
    for (PathId p : all_paths(g.depth(), g.k)) {
      if (!p.pretrained() && rng.uniform() < 0.4) g.alive.erase(p);
    }
    for (int l = 1; l <= g.depth(); ++l) {
      auto alphas = g.merge_alphas(l);
      double sum = 0.0;
      for (const auto& [p, a] : alphas) {
        if (a <= 0.0 || a > 1.0) {
          res.detail = "alpha out of (0,1] at " + path_name(p);
          return res;
        }
        sum += a;
      }
      worst_sum_err = std::max(worst_sum_err, std::abs(sum - 1.0));
    }
    // Singleton node: exactly 1, bit for bit.
    auto g2 = attach_proxies<double>(backbone, k, 2, 7);
    for (PathId p : all_paths(g2.depth(), g2.k)) {
      if (!p.pretrained()) g2.alive.erase(p);
    }
    for (int l = 1; l <= g2.depth(); ++l) {
      auto alphas = g2.merge_alphas(l);
      if (alphas.size() != 1 || alphas.begin()->second != 1.0) {
        res.detail = "singleton gate is not exactly 1 at node " + std::to_string(l);
        return res;
      }
    }
  }
  res.pass = worst_sum_err < 1e-12;
  std::ostringstream os;
  os << "max |sum(alpha)-1| = " << worst_sum_err;
  res.detail = os.str();
  return res;
}

// ---- group: complexity-oracle -----------------------------------------------

struct FixtureL3 {
  RMap r;
  AliveSet alive;
  ComplexityTable table;
  int L = 3;
};

FixtureL3 fixture_l3() {
  FixtureL3 f;
  f.alive = {PathId{1, 1}, PathId{2, 2}, PathId{3, 3}, PathId{1, 2}, PathId{2, 3}};
  f.r = {{PathId{1, 1}, 0.0},
         {PathId{2, 2}, 0.3},
         {PathId{3, 3}, 0.4},
         {PathId{1, 2}, 0.7},
         {PathId{2, 3}, 0.6}};
  for (PathId p : f.alive) f.table.C[p] = p.pretrained() ? 1.0 / 3.0 : 1.0 / 60.0;
  return f;
}

VerifyResult verify_complexity_oracle() {
  VerifyResult res{"complexity-oracle", false, ""};
  const auto f = fixture_l3();
  const std::map<PathId, double> expected = {{PathId{1, 1}, 0.79 / 3.0},
                                             {PathId{2, 2}, 0.25 / 3.0},
                                             {PathId{3, 3}, 0.36 / 3.0},
                                             {PathId{1, 2}, 0.06 / 60.0},
                                             {PathId{2, 3}, 0.19 / 60.0}};
  double worst = 0.0;
  for (const auto& [p, want] : expected) {
    const double got = expected_block_complexity(f.table.C.at(p), f.r, f.alive, p, f.L);
    worst = std::max(worst, std::abs(got - want));
  }
  const double total = expected_network_complexity(f.r, f.alive, f.table, f.L);
  worst = std::max(worst, std::abs(total - (1.4 / 3.0 + 0.25 / 60.0)));
  if (worst >= 1e-9) {
    res.detail = "worked example deviates by " + std::to_string(worst);
    return res;
  }

  // A dense gate on every pre-trained block and nothing else costs exactly 1.
  const auto plan = default_plan();
  ComplexityTable table = make_complexity_table(plan, 3);
  AliveSet diag;
  RMap r0;
  for (int l = 1; l <= static_cast<int>(plan.depth()); ++l) {
    diag.insert(PathId{l, l});
    r0[PathId{l, l}] = 0.0;
  }
  const double dense = expected_network_complexity(r0, diag, table, plan.depth());
  if (dense != 1.0) {
    res.detail = "all-pre-trained complexity is " + std::to_string(dense) + ", want 1.0";
    return res;
  }

  // Random graphs: the additive formula must stay an upper bound on the true
  // union probability (gap >= 0), and must match its own three-term pieces.
  Rng rng(31);
  double min_gap = 1.0, max_dev = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const int L = 3 + static_cast<int>(rng.uniform_u64(3));  // 3..5
    const int k = 1 + static_cast<int>(rng.uniform_u64(2));  // 1..2
    AliveSet alive;
    RMap r;
    ComplexityTable t;
    for (PathId p : all_paths(L, k)) {
      if (p.pretrained() || rng.uniform() < 0.7) {
        alive.insert(p);
        r[p] = rng.uniform();
        t.C[p] = rng.uniform(0.01, 1.0);
      }
    }
    for (PathId p : alive) {
      const auto orc = union_prob_oracle(r, alive, p, L);
      min_gap = std::min(min_gap, orc.gap);
      const double expect = t.C.at(p) * (1.0 - orc.approx);
      const double got = expected_block_complexity(t.C.at(p), r, alive, p, L);
      max_dev = std::max(max_dev, std::abs(got - expect));
    }
  }
  if (min_gap < -1e-12) {
    res.detail = "union bound violated: gap " + std::to_string(min_gap);
    return res;
  }
  if (max_dev >= 1e-9) {
    res.detail = "Eq-9 pieces deviate from oracle by " + std::to_string(max_dev);
    return res;
  }
  res.pass = true;
  std::ostringstream os;
  os << "worked example ok; min union gap " << min_gap;
  res.detail = os.str();
  return res;
}

// ---- group: eq9-mutation ----------------------------------------------------

// A deliberately wrong Eq. 9 (output-exclusion sign flipped).  The check
// passes only if the real implementation matches the worked example AND this
// mutant visibly does not — guarding the test against vacuous tolerance.
double mutant_block_complexity(double c, const RMap& r, const AliveSet& alive, PathId path,
                               int L) {
  const double self = r.at(path);
  const double pin = input_exclusion_prob(r, alive, path.src);
  const double pout = output_exclusion_prob(r, alive, path.dst, L);
  return c * (1.0 - self - pin + pout);  // sign flip: "-pout" is correct
}

VerifyResult verify_eq9_mutation() {
  VerifyResult res{"eq9-mutation", false, ""};
  const auto f = fixture_l3();
  const PathId g2{2, 2};  // P_out(2) = 0.24, so the flip moves the value by 0.16
  const double want = 0.25 / 3.0;
  const double real = expected_block_complexity(f.table.C.at(g2), f.r, f.alive, g2, f.L);
  const double mutant = mutant_block_complexity(f.table.C.at(g2), f.r, f.alive, g2, f.L);
  const bool real_ok = std::abs(real - want) < 1e-9;
  const bool mutant_detected = std::abs(mutant - want) > 1e-6;
  res.pass = real_ok && mutant_detected;
  std::ostringstream os;
  os << "real dev " << std::abs(real - want) << ", mutant dev " << std::abs(mutant - want);
  res.detail = os.str();
  return res;
}

// ---- group: elimination-oracle ----------------------------------------------

VerifyResult verify_elimination_oracle() {
  VerifyResult res{"elimination-oracle", false, ""};
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const int L = 3 + static_cast<int>(rng.uniform_u64(5));  // 3..7
    const int k = 1 + static_cast<int>(rng.uniform_u64(3));  // 1..3
    AliveSet alive;
    for (PathId p : all_paths(L, k)) {
      if (rng.uniform() < 0.6) alive.insert(p);
    }
    const auto elim = eliminate_dead_paths(L, alive);
    const auto oracle = live_paths_by_route_enumeration(L, alive);
    if (elim.live != oracle) {
      res.detail = "live-set mismatch at trial " + std::to_string(trial);
      return res;
    }
    if (elim.classifier_reachable != !oracle.empty()) {
      res.detail = "reachability flag mismatch at trial " + std::to_string(trial);
      return res;
    }
    const auto again = eliminate_dead_paths(L, elim.live);
    if (again.live != elim.live || !again.removed.empty()) {
      res.detail = "elimination is not idempotent at trial " + std::to_string(trial);
      return res;
    }
  }
  res.pass = true;
  res.detail = "matches route enumeration on 300 random graphs";
  return res;
}

// ---- group: backbone-equivalence ----------------------------------------------

VerifyResult verify_backbone_equivalence() {
  VerifyResult res{"backbone-equivalence", false, ""};
  const auto plan = tiny_plan();
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(plan, 51));
  auto g = attach_proxies<double>(backbone, 2, 3, 52);
  for (PathId p : all_paths(g.depth(), g.k)) {
    if (!p.pretrained()) g.alive.erase(p);
  }
  Rng rng(53);
  auto x = random_tensor({4, 1, 16, 16}, rng, 0.0, 1.0);
  auto nodes = backbone->node_activations(x, /*training=*/false);
  auto out = g.forward(x, /*training=*/false);
  const auto& top_student = out.nodes.at(g.depth());
  const auto& top_backbone = nodes.back();
  double worst = 0.0;
  for (std::int64_t i = 0; i < top_student.numel(); ++i) {
    worst = std::max(worst, std::abs(top_student.data()[i] - top_backbone.data()[i]));
  }
  res.pass = worst < 1e-10;
  std::ostringstream os;
  os << "max |node_L(student) - node_L(backbone)| = " << worst;
  res.detail = os.str();
  return res;
}

// ---- group: checkpoint-roundtrip ----------------------------------------------

VerifyResult verify_checkpoint_roundtrip() {
  VerifyResult res{"checkpoint-roundtrip", false, ""};
  const auto dir = std::filesystem::temp_directory_path() / "nettrim-verify-ckpt";
  std::filesystem::remove_all(dir);
  Rng rng(61);
  NamedTensors<float> state;
  Tensor<float> a(Shape{3, 4});
  Tensor<float> b(Shape{7});
  for (std::int64_t i = 0; i < a.numel(); ++i) a.data()[i] = static_cast<float>(rng.uniform());
  for (std::int64_t i = 0; i < b.numel(); ++i) b.data()[i] = static_cast<float>(rng.uniform());
  state.emplace_back("w", a);
  state.emplace_back("bias", b);
  save_state_dir(dir, state, {{"phase", "verify"}});
  Tensor<float> a2(Shape{3, 4});
  Tensor<float> b2(Shape{7});
  NamedTensors<float> dst;
  dst.emplace_back("w", a2);
  dst.emplace_back("bias", b2);
  restore_state(dst, load_state_dir(dir));
  if (std::memcmp(a.data(), a2.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) ||
      std::memcmp(b.data(), b2.data(), sizeof(float) * static_cast<std::size_t>(b.numel()))) {
    res.detail = "payload changed across save/load";
    return res;
  }
  // Shape drift must be rejected.
  bool drift_caught = false;
  try {
    Tensor<float> wrong(Shape{4, 3});
    NamedTensors<float> bad;
    bad.emplace_back("w", wrong);
    bad.emplace_back("bias", b2);
    restore_state(bad, load_state_dir(dir));
  } catch (const std::exception&) {
    drift_caught = true;
  }
  // Payload corruption must be rejected via the digest.
  bool corruption_caught = false;
  {
    std::fstream fs(dir / "w.nttn", std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(-1, std::ios::end);
    char c;
    fs.seekg(-1, std::ios::end);
    fs.get(c);
    fs.seekp(-1, std::ios::end);
    c = static_cast<char>(c ^ 0x1);
    fs.put(c);
  }
  try {
    load_state_dir(dir);
  } catch (const std::exception&) {
    corruption_caught = true;
  }
  std::filesystem::remove_all(dir);
  res.pass = drift_caught && corruption_caught;
  res.detail = drift_caught && corruption_caught
                   ? "roundtrip bit-exact; drift and corruption rejected"
                   : (!drift_caught ? "shape drift not rejected" : "corruption not rejected");
  return res;
}

// ---- group: data-determinism ----------------------------------------------

VerifyResult verify_data_determinism() {
  VerifyResult res{"data-determinism", false, ""};
  for (const char* difficulty : {"easy", "source", "hard"}) {
    TaskData a = gen_task(difficulty, 120, 100, 97);
    TaskData b = gen_task(difficulty, 120, 100, 97);
    if (a.train.labels != b.train.labels || a.test.labels != b.test.labels) {
      res.detail = std::string(difficulty) + ": labels differ across regeneration";
      return res;
    }
    if (std::memcmp(a.train.images.data(), b.train.images.data(),
                    sizeof(float) * static_cast<std::size_t>(a.train.images.numel())) != 0) {
      res.detail = std::string(difficulty) + ": pixels differ across regeneration";
      return res;
    }
    a.train.validate();
    a.test.validate();
  }
  res.pass = true;
  res.detail = "regeneration is byte-identical for easy/source/hard";
  return res;
}

// ---- group: proxy-pooling ---------------------------------------------------

VerifyResult verify_proxy_pooling() {
  VerifyResult res{"proxy-pooling", false, ""};
  const auto plan = default_plan();
  const int L = static_cast<int>(plan.depth());
  for (PathId p : all_paths(L, 3)) {
    if (p.pretrained()) continue;
    const auto s_in = plan.node_spatial(p.src), s_out = plan.node_spatial(p.dst);
    if (s_in == s_out) continue;
    Pool2dSpec pool{pool_ratio(s_in, s_out), pool_ratio(s_in, s_out), true};
    if (pool_out_size(s_in, pool) != s_out) {
      res.detail = "pooling misses target on " + path_name(p);
      return res;
    }
  }
  bool rejected = false;
  try {
    ProxyLayer<double>::make(4, 4, 7, 5, Rng(71));  // ceil(7/5)=2 -> lands on 4, not 5
  } catch (const std::invalid_argument&) {
    rejected = true;
  }
  res.pass = rejected;
  res.detail = rejected ? "window sizes land exactly; impossible ratio rejected"
                        : "impossible ratio was not rejected";
  return res;
}

template <typename F>
VerifyResult guarded(F&& fn, const char* name) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return VerifyResult{name, false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

std::vector<VerifyResult> run_verify() {
  std::vector<VerifyResult> out;
  out.push_back(guarded(verify_ops_gradcheck, "ops-gradcheck"));
  out.push_back(guarded(verify_complexity_grad, "complexity-grad"));
  out.push_back(guarded(verify_gate_softmax, "gate-softmax"));
  out.push_back(guarded(verify_complexity_oracle, "complexity-oracle"));
  out.push_back(guarded(verify_eq9_mutation, "eq9-mutation"));
  out.push_back(guarded(verify_elimination_oracle, "elimination-oracle"));
  out.push_back(guarded(verify_backbone_equivalence, "backbone-equivalence"));
  out.push_back(guarded(verify_checkpoint_roundtrip, "checkpoint-roundtrip"));
  out.push_back(guarded(verify_data_determinism, "data-determinism"));
  out.push_back(guarded(verify_proxy_pooling, "proxy-pooling"));
  return out;
}

}  // namespace nettrim
