// Copyright (c) 2026 the hs2s authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hs2s/autodiff.hpp"
#include "hs2s/rng.hpp"
#include "hs2s/tensor.hpp"

namespace {

using hs2s::Rng;
using hs2s::Tensor;
namespace ad = hs2s::ad;

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

using BuildFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

double eval_scalar(const BuildFn& build, const std::vector<Tensor>& vals) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(vals.size());
  for (const auto& v : vals) vars.push_back(tape.leaf(v, true));
  ad::Var out = build(tape, vars);
  return tape.val(out).v[0];
}

// Central finite differences against the tape gradient, every element of
// every input. Inputs must be chosen away from kinks (relu/clamp edges).
void check_grads(const BuildFn& build, std::vector<Tensor> vals,
                 double eps = 1e-5, double tol = 1e-6) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(vals.size());
  for (const auto& v : vals) vars.push_back(tape.leaf(v, true));
  ad::Var out = build(tape, vars);
  REQUIRE(tape.val(out).numel() == 1);
  tape.backward(out);
  std::vector<Tensor> analytic;
  for (const auto& var : vars) analytic.push_back(tape.grad(var));

  for (size_t i = 0; i < vals.size(); ++i) {
    for (int64_t j = 0; j < vals[i].numel(); ++j) {
      const double keep = vals[i].v[j];
      vals[i].v[j] = keep + eps;
      const double fp = eval_scalar(build, vals);
      vals[i].v[j] = keep - eps;
      const double fm = eval_scalar(build, vals);
      vals[i].v[j] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic[i].v[j];
      const double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
      CHECK_MESSAGE(std::fabs(fd - an) <= tol * scale,
                    "input ", i, " elem ", j, " fd=", fd, " analytic=", an);
    }
  }
}

// Weighted sum with fixed weights turns any tensor output into a scalar
// without the cancellation a plain sum would allow.
ad::Var weighted_sum(ad::Tape& t, ad::Var a, uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w = rand_tensor(t.val(a).shape, rng, 0.25, 1.0);
  return ad::sum_all(ad::mul(a, t.leaf(std::move(w))));
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and indexing") {
    Tensor t({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.ndim() == 4);
    CHECK(t.dim(1) == 3);
    t.at4(1, 2, 3, 4) = 7.5;
    CHECK(t.v[119] == 7.5);
    t.at4(0, 0, 0, 0) = -1.0;
    CHECK(t.v[0] == -1.0);
    CHECK(t.abs_max() == 7.5);
    CHECK(t.all_finite());
    t.v[3] = std::nan("");
    CHECK_FALSE(t.all_finite());
  }

  TEST_CASE("fill constructor and shape checks") {
    Tensor a({3, 2}, 0.5);
    CHECK(a.numel() == 6);
    for (double x : a.v) CHECK(x == 0.5);
    Tensor b({2, 3});
    CHECK_THROWS_AS(hs2s::check_same_shape(a, b, "test"), std::invalid_argument);
    CHECK(a.shape_str() == "[3,2]");
  }

  TEST_CASE("rng determinism and ranges") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(5);
    for (int i = 0; i < 1000; ++i) {
      double u = c.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
      int k = c.uniform_int(-3, 3);
      CHECK(k >= -3);
      CHECK(k <= 3);
    }
    // Distinct seeds should not produce identical streams.
    Rng d(6);
    Rng e(7);
    bool differ = false;
    for (int i = 0; i < 8; ++i) differ |= (d.next_u64() != e.next_u64());
    CHECK(differ);
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("elementwise ops match finite differences") {
    Rng rng(42);
    std::vector<int> shp{2, 2, 3, 3};

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::add(v[0], v[1]));
    }, {rand_tensor(shp, rng, -1, 1), rand_tensor(shp, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::sub(v[0], v[1]));
    }, {rand_tensor(shp, rng, -1, 1), rand_tensor(shp, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::mul(v[0], v[1]));
    }, {rand_tensor(shp, rng, -1, 1), rand_tensor(shp, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::affine(v[0], 1.7, -0.3));
    }, {rand_tensor(shp, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::sigmoid(v[0]));
    }, {rand_tensor(shp, rng, -3, 3)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::tanh_op(v[0]));
    }, {rand_tensor(shp, rng, -2, 2)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::log_op(v[0]));
    }, {rand_tensor(shp, rng, 0.1, 2.0)});
  }

  TEST_CASE("kinked ops away from their corners") {
    Rng rng(7);
    std::vector<int> shp{1, 3, 4, 4};
    // Push values at least 0.05 from the relu corner at 0.
    Tensor a = rand_tensor(shp, rng, 0.05, 1.0);
    Rng signs(8);
    for (double& x : a.v) {
      if (signs.bernoulli(0.5)) x = -x;
    }
    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::relu(v[0]));
    }, {a});

    // clamp corners sit at +-0.5; sample away from them.
    Tensor b = rand_tensor(shp, rng, -0.4, 0.4);
    for (size_t i = 0; i < b.v.size(); i += 3) b.v[i] += (b.v[i] > 0 ? 0.3 : -0.3);
    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::clamp(v[0], -0.5, 0.5));
    }, {b});
  }

  TEST_CASE("structural ops match finite differences") {
    Rng rng(21);
    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::concat_ch(v[0], v[1]));
    }, {rand_tensor({2, 2, 3, 4}, rng, -1, 1), rand_tensor({2, 3, 3, 4}, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::slice_ch(v[0], 1, 4));
    }, {rand_tensor({2, 5, 2, 3}, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::upsample2(v[0]));
    }, {rand_tensor({2, 2, 3, 2}, rng, -1, 1)});

    check_grads([](ad::Tape&, std::vector<ad::Var>& v) {
      return ad::sum_all(v[0]);
    }, {rand_tensor({2, 3}, rng, -1, 1)});

    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::stack_batch({v[0], v[1], v[2]}));
    }, {rand_tensor({1, 2, 3, 2}, rng, -1, 1), rand_tensor({1, 2, 3, 2}, rng, -1, 1),
        rand_tensor({1, 2, 3, 2}, rng, -1, 1)});
  }

  TEST_CASE("stack_batch layout and contracts") {
    ad::Tape t;
    Tensor a({1, 1, 1, 2}), b({1, 1, 1, 2});
    a.v = {1, 2};
    b.v = {3, 4};
    ad::Var s = ad::stack_batch({t.leaf(a), t.leaf(b)});
    CHECK(t.val(s).shape == std::vector<int>{2, 1, 1, 2});
    CHECK(t.val(s).v == std::vector<double>{1, 2, 3, 4});

    Tensor odd({1, 1, 2, 1});
    CHECK_THROWS_AS(ad::stack_batch({t.leaf(a), t.leaf(odd)}), std::invalid_argument);
    Tensor batched({2, 1, 1, 2});
    CHECK_THROWS_AS(ad::stack_batch({t.leaf(batched)}), std::invalid_argument);
    CHECK_THROWS_AS(ad::stack_batch({}), std::invalid_argument);
  }

  TEST_CASE("upsample2 nearest-neighbour values") {
    ad::Tape t;
    Tensor x({1, 1, 2, 2});
    x.v = {1, 2, 3, 4};
    ad::Var u = ad::upsample2(t.leaf(x));
    const Tensor& uv = t.val(u);
    CHECK(uv.shape == std::vector<int>{1, 1, 4, 4});
    std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    CHECK(uv.v == want);
  }

  TEST_CASE("conv2d matches finite differences across configs") {
    Rng rng(31);
    struct Cfg {
      std::vector<int> x, w;
      int stride, ph, pw;
    };
    // 3x3 same-pad, strided 5x5, pointwise fast path, and the two
    // separable 7x1 / 1x7 shapes used by the large-kernel merge blocks.
    std::vector<Cfg> cfgs = {
        {{2, 3, 6, 5}, {2, 3, 3, 3}, 1, 1, 1},
        {{1, 2, 9, 8}, {3, 2, 5, 5}, 2, 2, 2},
        {{2, 4, 4, 4}, {3, 4, 1, 1}, 1, 0, 0},
        {{1, 2, 8, 7}, {2, 2, 7, 1}, 1, 3, 0},
        {{1, 2, 7, 8}, {2, 2, 1, 7}, 1, 0, 3},
        {{1, 3, 5, 5}, {2, 3, 3, 3}, 2, 1, 1},
    };
    for (const auto& cfg : cfgs) {
      CAPTURE(cfg.w[2]);
      CAPTURE(cfg.w[3]);
      CAPTURE(cfg.stride);
      auto build = [&cfg](ad::Tape& t, std::vector<ad::Var>& v) {
        return weighted_sum(t, ad::conv2d(v[0], v[1], v[2], cfg.stride, cfg.ph, cfg.pw));
      };
      check_grads(build, {rand_tensor(cfg.x, rng, -1, 1),
                          rand_tensor(cfg.w, rng, -1, 1),
                          rand_tensor({cfg.w[0]}, rng, -1, 1)});
    }
  }

  TEST_CASE("conv2d pointwise identity smoke") {
    ad::Tape t;
    Tensor x({1, 1, 2, 2});
    x.v = {1, 2, 3, 4};
    Tensor w({1, 1, 1, 1}, 1.0);
    Tensor b({1}, 0.5);
    ad::Var y = ad::conv2d(t.leaf(x), t.leaf(w), t.leaf(b), 1, 0, 0);
    std::vector<double> want = {1.5, 2.5, 3.5, 4.5};
    CHECK(t.val(y).v == want);
  }

  TEST_CASE("channel cosine values and gradients") {
    ad::Tape t;
    Tensor a({1, 2, 1, 2});
    a.v = {1, 0, 0, 2};  // pixel0: (1,0); pixel1: (0,2)
    Tensor b({1, 2, 1, 2});
    b.v = {1, 1, 0, 2};  // pixel0: (1,0); pixel1: (1,2)
    ad::Var c = ad::channel_cosine(t.leaf(a), t.leaf(b), 0.0);
    CHECK(t.val(c).shape == std::vector<int>{1, 1, 1, 2});
    CHECK(t.val(c).v[0] == doctest::Approx(1.0));
    CHECK(t.val(c).v[1] == doctest::Approx(2.0 / std::sqrt(5.0)));

    Rng rng(55);
    check_grads([](ad::Tape& t, std::vector<ad::Var>& v) {
      return weighted_sum(t, ad::channel_cosine(v[0], v[1]));
    }, {rand_tensor({1, 4, 3, 2}, rng, 0.2, 1.0),
        rand_tensor({1, 4, 3, 2}, rng, 0.2, 1.0)});
  }

  TEST_CASE("softmax cross-entropy value and gradient") {
    // Uniform logits over K classes must give loss log(K).
    ad::Tape t;
    Tensor logits({1, 4, 2, 2}, 0.0);
    Tensor targets({1, 2, 2});
    targets.v = {0, 1, 2, 3};
    ad::Var l = ad::softmax_ce_mean(t.leaf(logits), targets);
    CHECK(t.val(l).v[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(77);
    Tensor tg({2, 3, 3});
    for (double& x : tg.v) x = rng.uniform_int(0, 3);
    check_grads([&tg](ad::Tape&, std::vector<ad::Var>& v) {
      return ad::softmax_ce_mean(v[0], tg);
    }, {rand_tensor({2, 4, 3, 3}, rng, -2, 2)});

    Tensor bad({1, 2, 2});
    bad.v = {0, 1, 4, 0};
    ad::Tape t2;
    ad::Var lg = t2.leaf(Tensor({1, 4, 2, 2}, 0.0), true);
    CHECK_THROWS_AS(ad::softmax_ce_mean(lg, bad), std::invalid_argument);
  }

  TEST_CASE("diamond graphs accumulate both paths") {
    ad::Tape t;
    Tensor x({2, 2});
    x.v = {1, -2, 3, 0.5};
    ad::Var vx = t.leaf(x, true);
    ad::Var z = ad::mul(vx, vx);
    ad::Var f = ad::sum_all(ad::add(z, z));
    t.backward(f);
    const Tensor& g = t.grad(vx);
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(g.v[i] == doctest::Approx(4.0 * x.v[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("tape contracts") {
    ad::Tape t;
    ad::Var a = t.leaf(Tensor({2, 2}, 1.0), true);
    ad::Var s = ad::sum_all(a);
    // Non-scalar backward is rejected.
    CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), std::invalid_argument);

    // Leaves that do not require gradients never allocate one.
    ad::Tape t2;
    ad::Var c = t2.leaf(Tensor({2, 2}, 2.0), false);
    ad::Var d = t2.leaf(Tensor({2, 2}, 3.0), true);
    ad::Var out = ad::sum_all(ad::mul(c, d));
    t2.backward(out);
    CHECK_FALSE(t2.has_grad(c));
    CHECK(t2.grad(d).v[0] == doctest::Approx(2.0));

    // Shape mismatches are contract violations.
    ad::Tape t3;
    ad::Var u = t3.leaf(Tensor({2, 2}, 0.0));
    ad::Var w = t3.leaf(Tensor({2, 3}, 0.0));
    CHECK_THROWS_AS(ad::add(u, w), std::invalid_argument);
  }
}
