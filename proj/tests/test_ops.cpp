#include <doctest.h>

#include "nettrim/gradcheck.hpp"
#include "nettrim/ops.hpp"
#include "nettrim/oracles.hpp"
#include "nettrim/rng.hpp"

#include <cmath>
#include <vector>

using namespace nettrim;

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Fixed mixing weights turn a tensor-valued op into a scalar loss with
// non-uniform upstream gradients (sum alone would hide transposition bugs).
TensorD mixing_weights(const Shape& shape, std::uint64_t salt) {
  Rng rng(salt);
  TensorD w(shape);
  for (std::int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.uniform(0.5, 1.5);
  return w;
}

constexpr double kGradTol = 1e-4;  // pinned contract for every differentiable op

}  // namespace

TEST_CASE("gradcheck: elementwise ops") {
  Rng rng(11);
  TensorD a = random_tensor(Shape{2, 3}, rng);
  TensorD b = random_tensor(Shape{2, 3}, rng);
  TensorD s = TensorD::scalar(0.7);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  s.set_requires_grad(true);
  const TensorD w = mixing_weights(Shape{2, 3}, 3);

  auto check = [&](auto fwd) {
    auto rep = grad_check<double>(fwd, {a, b, s});
    CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
  };
  check([&] { return sum(mul(add(a, b), w)); });
  check([&] { return sum(mul(sub(a, b), w)); });
  check([&] { return sum(mul(mul(a, b), w)); });
  check([&] { return sum(mul(scale(a, s), w)); });
  check([&] { return sum(mul(scale_const(a, -2.5), w)); });
}

TEST_CASE("gradcheck: relu away from the kink") {
  Rng rng(12);
  TensorD x = random_tensor(Shape{3, 4}, rng);
  // Push every entry at least 0.1 from zero; the kink itself is not
  // differentiable and finite differences would straddle it.
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    x.data()[i] += (x.data()[i] >= 0 ? 0.1 : -0.1);
  }
  x.set_requires_grad(true);
  const TensorD w = mixing_weights(x.shape(), 4);
  auto rep = grad_check<double>([&] { return sum(mul(relu(x), w)); }, {x});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
}

TEST_CASE("gradcheck: reductions and scalar plumbing") {
  Rng rng(13);
  TensorD x = random_tensor(Shape{5}, rng, 0.2, 1.2);  // keep prod() factors nonzero
  x.set_requires_grad(true);

  auto check = [&](auto fwd) {
    auto rep = grad_check<double>(fwd, {x});
    CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
  };
  check([&] { return sum(x); });
  check([&] { return sum_of_squares(x); });
  check([&] { return prod(x); });
  check([&] { return pick(x, 3); });
  check([&] {
    std::vector<TensorD> parts{pick(x, 0), pick(x, 2), pick(x, 4)};
    return sum_of_squares(concat_scalars(parts));
  });
  check([&] {
    const TensorD w = mixing_weights(Shape{5, 1}, 5);
    return sum(mul(reshape(x, Shape{5, 1}), w));
  });
}

TEST_CASE("gradcheck: prod with an exact zero factor") {
  TensorD x = TensorD::from_vector(Shape{4}, {0.8, 0.0, 1.3, -0.6});
  x.set_requires_grad(true);
  auto rep = grad_check<double>([&] { return prod(x); }, {x});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
  // The zero entry's gradient is the product of the others; no division involved.
  {
    ComputeGraph<double> tape;
    x.zero_grad();
    tape.backward(prod(x));
  }
  CHECK(x.grad_data()[1] == doctest::Approx(0.8 * 1.3 * -0.6));
}

TEST_CASE("gradcheck: softmax family") {
  Rng rng(14);
  TensorD a = random_tensor(Shape{6}, rng, -2.0, 2.0);
  a.set_requires_grad(true);
  const TensorD w1 = mixing_weights(Shape{6}, 6);
  auto rep = grad_check<double>([&] { return sum(mul(softmax(a), w1)); }, {a});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);

  TensorD logits = random_tensor(Shape{4, 5}, rng, -2.0, 2.0);
  logits.set_requires_grad(true);
  const TensorD w2 = mixing_weights(Shape{4, 5}, 7);
  rep = grad_check<double>([&] { return sum(mul(log_softmax(logits), w2)); }, {logits});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);

  const std::vector<std::int64_t> labels{1, 4, 0, 2};
  rep = grad_check<double>([&] { return cross_entropy(logits, labels); }, {logits});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
}

TEST_CASE("gradcheck: linear") {
  Rng rng(15);
  TensorD x = random_tensor(Shape{3, 4}, rng);
  TensorD w = random_tensor(Shape{2, 4}, rng);
  TensorD b = random_tensor(Shape{2}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  const TensorD mix = mixing_weights(Shape{3, 2}, 8);
  auto rep = grad_check<double>([&] { return sum(mul(linear(x, w, b), mix)); }, {x, w, b});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
}

TEST_CASE("gradcheck: conv2d with stride and padding") {
  Rng rng(16);
  TensorD x = random_tensor(Shape{2, 2, 5, 5}, rng);
  TensorD w = random_tensor(Shape{3, 2, 3, 3}, rng);
  TensorD b = random_tensor(Shape{3}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  const Conv2dSpec spec{2, 1};
  const TensorD mix = mixing_weights(Shape{2, 3, 3, 3}, 9);
  auto rep = grad_check<double>([&] { return sum(mul(conv2d(x, w, b, spec), mix)); },
                                {x, w, b}, 1e-5, 64);
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
}

TEST_CASE("gradcheck: pooling") {
  Rng rng(17);
  // Well-separated entries keep the argmax stable under the finite-difference
  // step, where maxpool is differentiable.
  TensorD x(Shape{1, 2, 4, 4});
  std::vector<std::int64_t> perm(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_u64(i + 1)]);
  }
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    x.data()[i] = 0.05 * static_cast<double>(perm[static_cast<std::size_t>(i)]);
  }
  x.set_requires_grad(true);
  const TensorD mix = mixing_weights(Shape{1, 2, 2, 2}, 10);
  auto rep = grad_check<double>(
      [&] { return sum(mul(maxpool2d(x, Pool2dSpec{2, 2, false}), mix)); }, {x});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);

  TensorD y = random_tensor(Shape{2, 3, 4, 4}, rng);
  y.set_requires_grad(true);
  const TensorD mix2 = mixing_weights(Shape{2, 3}, 11);
  rep = grad_check<double>([&] { return sum(mul(global_avg_pool(y), mix2)); }, {y});
  CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
}

TEST_CASE("gradcheck: batchnorm in both modes") {
  Rng rng(18);
  TensorD x = random_tensor(Shape{3, 2, 3, 3}, rng);
  TensorD gamma = random_tensor(Shape{2}, rng, 0.5, 1.5);
  TensorD beta = random_tensor(Shape{2}, rng, -0.3, 0.3);
  x.set_requires_grad(true);
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
  const TensorD mix = mixing_weights(x.shape(), 12);

  SUBCASE("training statistics") {
    auto rep = grad_check<double>(
        [&] {
          TensorD rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);  // scratch running stats
          return sum(mul(batchnorm2d(x, gamma, beta, rm, rv, /*training=*/true), mix));
        },
        {x, gamma, beta}, 1e-5, 32);
    CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
  }
  SUBCASE("frozen running statistics") {
    TensorD rm = random_tensor(Shape{2}, rng, -0.2, 0.2);
    TensorD rv = random_tensor(Shape{2}, rng, 0.5, 2.0);
    auto rep = grad_check<double>(
        [&] {
          return sum(mul(batchnorm2d(x, gamma, beta, rm, rv, /*training=*/false), mix));
        },
        {x, gamma, beta}, 1e-5, 32);
    CHECK_MESSAGE(rep.max_rel_err < kGradTol, rep.worst);
  }
}

TEST_CASE("conv2d matches the direct-sum reference") {
  Rng rng(19);
  const struct {
    std::int64_t n, ci, co, k, stride, pad, h, w;
  } cases[] = {
      {1, 1, 1, 1, 1, 0, 5, 5}, {2, 3, 4, 3, 1, 1, 7, 6}, {1, 2, 5, 3, 2, 1, 9, 9},
      {2, 1, 2, 1, 2, 0, 6, 8}, {1, 4, 3, 3, 1, 0, 5, 7}, {3, 2, 2, 3, 2, 0, 8, 5},
  };
  for (const auto& c : cases) {
    TensorD x = random_tensor(Shape{c.n, c.ci, c.h, c.w}, rng);
    TensorD w = random_tensor(Shape{c.co, c.ci, c.k, c.k}, rng);
    TensorD b = random_tensor(Shape{c.co}, rng);
    const Conv2dSpec spec{c.stride, c.pad};
    TensorD fast = conv2d(x, w, b, spec);
    TensorD slow = naive_conv2d(x, w, b, spec);
    REQUIRE(fast.shape() == slow.shape());
    double max_diff = 0.0;
    for (std::int64_t i = 0; i < fast.numel(); ++i) {
      max_diff = std::max(max_diff, std::abs(fast.data()[i] - slow.data()[i]));
    }
    CHECK(max_diff < 1e-12);
  }
}

TEST_CASE("conv2d frozen values on a hand-worked example") {
  // 3x3 input 1..9, 2x2 kernel [[1,0],[0,1]]: each output is the sum of the
  // window's main diagonal.
  TensorD x = TensorD::from_vector(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  TensorD w = TensorD::from_vector(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  TensorD b = TensorD::from_vector(Shape{1}, {0.5});
  TensorD y = conv2d(x, w, b, Conv2dSpec{1, 0});
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data()[0] == doctest::Approx(1 + 5 + 0.5));
  CHECK(y.data()[1] == doctest::Approx(2 + 6 + 0.5));
  CHECK(y.data()[2] == doctest::Approx(4 + 8 + 0.5));
  CHECK(y.data()[3] == doctest::Approx(5 + 9 + 0.5));
}

TEST_CASE("batchnorm semantics: normalization, running stats, eval mode") {
  Rng rng(20);
  const std::int64_t n = 4, c = 3, h = 2, w = 2;
  TensorD x = random_tensor(Shape{n, c, h, w}, rng, -2.0, 3.0);
  TensorD gamma(Shape{c}, 1.0), beta(Shape{c}, 0.0);
  TensorD rm(Shape{c}, 0.0), rv(Shape{c}, 1.0);
  const BatchNormState bn;  // momentum 0.1, eps 1e-5

  TensorD y = batchnorm2d(x, gamma, beta, rm, rv, /*training=*/true, bn);

  const std::int64_t m = n * h * w;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mu = 0.0, var = 0.0, ymu = 0.0, yvar = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::int64_t j = 0; j < h * w; ++j) {
        mu += x.data()[(s * c + ch) * h * w + j];
        ymu += y.data()[(s * c + ch) * h * w + j];
      }
    }
    mu /= static_cast<double>(m);
    ymu /= static_cast<double>(m);
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::int64_t j = 0; j < h * w; ++j) {
        var += std::pow(x.data()[(s * c + ch) * h * w + j] - mu, 2);
        yvar += std::pow(y.data()[(s * c + ch) * h * w + j] - ymu, 2);
      }
    }
    var /= static_cast<double>(m);
    yvar /= static_cast<double>(m);
    // gamma=1, beta=0: output is the normalized batch (up to eps in the std).
    CHECK(std::abs(ymu) < 1e-10);
    CHECK(yvar == doctest::Approx(var / (var + bn.eps)).epsilon(1e-9));
    // Running stats blend in the batch mean and the UNBIASED variance.
    const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
    CHECK(rm.data()[ch] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(rv.data()[ch] == doctest::Approx(0.9 * 1.0 + 0.1 * unbiased).epsilon(1e-12));
  }

  // Eval mode: pure elementwise affine from the (now fixed) running stats.
  const std::vector<double> rm_before(rm.data(), rm.data() + c);
  const std::vector<double> rv_before(rv.data(), rv.data() + c);
  TensorD ye = batchnorm2d(x, gamma, beta, rm, rv, /*training=*/false, bn);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(rv_before[static_cast<std::size_t>(ch)] + bn.eps);
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::int64_t j = 0; j < h * w; ++j) {
        const auto idx = (s * c + ch) * h * w + j;
        const double want =
            (x.data()[idx] - rm_before[static_cast<std::size_t>(ch)]) * is;
        CHECK(ye.data()[idx] == doctest::Approx(want).epsilon(1e-12));
      }
    }
    // Eval must not touch the running statistics.
    CHECK(rm.data()[ch] == rm_before[static_cast<std::size_t>(ch)]);
    CHECK(rv.data()[ch] == rv_before[static_cast<std::size_t>(ch)]);
  }
}

TEST_CASE("maxpool: ties route gradient to the first occurrence") {
  TensorD x = TensorD::from_vector(Shape{1, 1, 2, 2}, {5.0, 5.0, 1.0, 2.0});
  x.set_requires_grad(true);
  {
    ComputeGraph<double> tape;
    auto y = maxpool2d(x, Pool2dSpec{2, 2, false});
    REQUIRE(y.numel() == 1);
    CHECK(y.data()[0] == 5.0);
    tape.backward(sum(y));
  }
  CHECK(x.grad_data()[0] == 1.0);  // row-major scan: (0,0) beats (0,1)
  CHECK(x.grad_data()[1] == 0.0);
  CHECK(x.grad_data()[2] == 0.0);
  CHECK(x.grad_data()[3] == 0.0);
}

TEST_CASE("maxpool: ceil mode clips the hanging window") {
  CHECK(pool_out_size(5, Pool2dSpec{2, 2, false}) == 2);
  CHECK(pool_out_size(5, Pool2dSpec{2, 2, true}) == 3);
  CHECK(pool_out_size(4, Pool2dSpec{2, 2, true}) == 2);  // exact fit: no extra window

  TensorD x(Shape{1, 1, 5, 5});
  for (std::int64_t i = 0; i < 25; ++i) x.data()[i] = static_cast<double>(i);
  TensorD y = maxpool2d(x, Pool2dSpec{2, 2, true});
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[0 * 3 + 0] == 6.0);   // full 2x2 window
  CHECK(y.data()[0 * 3 + 2] == 9.0);   // clipped to column 4
  CHECK(y.data()[2 * 3 + 0] == 21.0);  // clipped to row 4
  CHECK(y.data()[2 * 3 + 2] == 24.0);  // clipped to the single corner element
}

TEST_CASE("pool_ratio and conv_out_size") {
  CHECK(pool_ratio(28, 14) == 2);
  CHECK(pool_ratio(28, 7) == 4);
  CHECK(pool_ratio(7, 7) == 1);
  CHECK(pool_ratio(15, 7) == 3);  // ceil(15/7)
  CHECK_THROWS_AS(pool_ratio(7, 14), std::invalid_argument);

  CHECK(conv_out_size(28, 3, 1, 1) == 28);
  CHECK(conv_out_size(28, 3, 2, 1) == 14);
  CHECK(conv_out_size(5, 3, 1, 0) == 3);
}

TEST_CASE("ops validate shapes") {
  TensorD a(Shape{2, 3}), b(Shape{3, 2}), v(Shape{4});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(scale(a, b), std::invalid_argument);
  CHECK_THROWS_AS(softmax(a), std::invalid_argument);
  CHECK_THROWS_AS(prod(a), std::invalid_argument);
  CHECK_THROWS_AS(pick(v, 4), std::invalid_argument);
  CHECK_THROWS_AS(linear(a, a, v), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(a, {0, 1, 2}), std::invalid_argument);  // label count
  CHECK_THROWS_AS(cross_entropy(a, {0, 3}), std::invalid_argument);     // label range
  TensorD img(Shape{1, 1, 2, 2}), k5(Shape{1, 1, 5, 5}), b1(Shape{1});
  CHECK_THROWS_AS(conv2d(img, k5, b1, Conv2dSpec{1, 0}), std::invalid_argument);
}
