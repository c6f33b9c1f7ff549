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

#include "hs2s/losses.hpp"
#include "hs2s/rng.hpp"
#include "oracles.hpp"

namespace {

using hs2s::kDistanceInf;
using hs2s::LossConfig;
using hs2s::Rng;
using hs2s::Tensor;
namespace ad = hs2s::ad;

Tensor random_mask(int h, int w, Rng& rng, double p_fg = 0.4) {
  Tensor m({h, w});
  for (double& x : m.v) x = rng.bernoulli(p_fg) ? 1.0 : 0.0;
  return m;
}

Tensor random_prob(const std::vector<int>& shape, Rng& rng) {
  Tensor p(shape);
  for (double& x : p.v) x = rng.uniform(0.02, 0.98);
  return p;
}

double eval_bce(const Tensor& prob, const Tensor& gt, const LossConfig& cfg) {
  ad::Tape t;
  return t.val(hs2s::balanced_bce(t.leaf(prob), gt, cfg)).v[0];
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("balanced bce forced cases") {
    LossConfig cfg;
    // 2x2 with two fg / two bg, p = 0.5 everywhere: beta = 0.5 and every
    // pixel contributes 0.5*ln2.
    Tensor gt({1, 1, 2, 2});
    gt.v = {1, 1, 0, 0};
    Tensor p({1, 1, 2, 2}, 0.5);
    CHECK(eval_bce(p, gt, cfg) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // Perfect prediction: only the clamp keeps the loss nonzero.
    Tensor exact = gt;
    CHECK(eval_bce(exact, gt, cfg) <= 4.0 * cfg.eps);
    CHECK(eval_bce(exact, gt, cfg) >= 0.0);

    // All-background frame: the foreground sum is empty and beta = 1
    // zeroes the background weight, so the loss collapses to 0.
    Tensor bg({1, 1, 2, 2}, 0.0);
    Tensor phalf({1, 1, 2, 2}, 0.5);
    CHECK(eval_bce(phalf, bg, cfg) == 0.0);

    Tensor bad = gt;
    bad.v[0] = 0.5;
    ad::Tape t;
    ad::Var vp = t.leaf(p);
    CHECK_THROWS_AS(hs2s::balanced_bce(vp, bad, cfg), std::invalid_argument);
  }

  TEST_CASE("balanced bce matches per-pixel oracle") {
    LossConfig cfg;
    Rng rng(301);
    for (int it = 0; it < 50; ++it) {
      const int h = rng.uniform_int(2, 6), w = rng.uniform_int(2, 6);
      const int b = rng.uniform_int(1, 3);
      Tensor gt({b, 1, h, w});
      for (double& x : gt.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
      Tensor p = random_prob({b, 1, h, w}, rng);
      const double want = oracle::balanced_bce(p, gt, cfg.eps, false);
      CHECK(eval_bce(p, gt, cfg) == doctest::Approx(want).epsilon(1e-9));

      LossConfig per = cfg;
      per.beta_per_frame = true;
      const double want_pf = oracle::balanced_bce(p, gt, cfg.eps, true);
      CHECK(eval_bce(p, gt, per) == doctest::Approx(want_pf).epsilon(1e-9));
    }
  }

  TEST_CASE("balanced bce on class-balanced images is half the plain sum") {
    LossConfig cfg;
    Rng rng(302);
    for (int it = 0; it < 20; ++it) {
      // Exactly half the pixels foreground.
      Tensor gt({1, 1, 4, 4});
      for (int j = 0; j < 16; ++j) gt.v[j] = j < 8 ? 1.0 : 0.0;
      // Shuffle deterministically.
      for (int j = 15; j > 0; --j) {
        std::swap(gt.v[j], gt.v[rng.uniform_int(0, j)]);
      }
      Tensor p = random_prob({1, 1, 4, 4}, rng);
      double plain = 0.0;
      for (int j = 0; j < 16; ++j) {
        const double pc = std::clamp(p.v[j], cfg.eps, 1.0 - cfg.eps);
        plain -= gt.v[j] == 1.0 ? std::log(pc) : std::log(1.0 - pc);
      }
      CHECK(eval_bce(p, gt, cfg) == doctest::Approx(0.5 * plain).epsilon(1e-9));
    }
  }

  TEST_CASE("balanced bce gradient matches finite differences") {
    LossConfig cfg;
    Rng rng(303);
    Tensor gt({2, 1, 3, 3});
    for (double& x : gt.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    Tensor p = random_prob({2, 1, 3, 3}, rng);

    ad::Tape t;
    ad::Var vp = t.leaf(p, true);
    t.backward(hs2s::balanced_bce(vp, gt, cfg));
    const Tensor& an = t.grad(vp);
    const double eps = 1e-6;
    for (int64_t j = 0; j < p.numel(); ++j) {
      Tensor pp = p, pm = p;
      pp.v[j] += eps;
      pm.v[j] -= eps;
      const double fd = (eval_bce(pp, gt, cfg) - eval_bce(pm, gt, cfg)) / (2 * eps);
      CHECK(std::fabs(fd - an.v[j]) <= 1e-4 * std::max(1.0, std::fabs(fd)));
    }
  }

  TEST_CASE("distance transform forced cases") {
    // Lone foreground pixel: it is its own boundary.
    Tensor m({5, 5}, 0.0);
    m.v[2 * 5 + 2] = 1.0;
    auto d = hs2s::distance_transform(m);
    CHECK(d[2 * 5 + 2] == 0);
    CHECK(d[1 * 5 + 2] == 1);
    CHECK(d[3 * 5 + 2] == 1);
    CHECK(d[2 * 5 + 1] == 1);
    CHECK(d[2 * 5 + 3] == 1);
    CHECK(d[1 * 5 + 1] == 2);
    CHECK(d[0 * 5 + 0] == 4);

    // All-foreground: the image border is padded as background, so the
    // outer ring is boundary.
    Tensor full({4, 4}, 1.0);
    auto df = hs2s::distance_transform(full);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const bool outer = y == 0 || y == 3 || x == 0 || x == 3;
        CHECK(df[static_cast<size_t>(y) * 4 + x] == (outer ? 0 : 1));
      }

    // No foreground at all: sentinel everywhere.
    Tensor none({3, 3}, 0.0);
    for (int v : hs2s::distance_transform(none)) CHECK(v == kDistanceInf);
  }

  TEST_CASE("distance transform matches BFS oracle") {
    Rng rng(310);
    for (int it = 0; it < 120; ++it) {
      Tensor m = random_mask(16, 16, rng, rng.uniform(0.1, 0.9));
      auto got = hs2s::distance_transform(m);
      auto want = oracle::bfs_distance(m);
      CHECK(got == want);
    }
  }

  TEST_CASE("distance transform is 1-Lipschitz across neighbours") {
    Rng rng(311);
    for (int it = 0; it < 20; ++it) {
      Tensor m = random_mask(12, 12, rng);
      auto d = hs2s::distance_transform(m);
      if (d[0] == kDistanceInf) continue;
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) {
          if (x + 1 < 12) CHECK(std::abs(d[y * 12 + x] - d[y * 12 + x + 1]) <= 1);
          if (y + 1 < 12) CHECK(std::abs(d[y * 12 + x] - d[(y + 1) * 12 + x]) <= 1);
        }
    }
  }

  TEST_CASE("border targets binning") {
    const std::vector<int> edges{2, 5, 10};
    // Lone fg pixel in a wide strip gives every distance along the row.
    Tensor m({1, 41}, 0.0);
    m.v[0] = 1.0;
    auto cls = hs2s::border_targets(m, edges);
    CHECK(cls[0] == 0);   // d=0
    CHECK(cls[2] == 0);   // d=2: 2<2 is false
    CHECK(cls[3] == 1);   // d=3
    CHECK(cls[5] == 1);   // d=5
    CHECK(cls[6] == 2);   // d=6
    CHECK(cls[10] == 2);  // d=10
    CHECK(cls[11] == 3);  // d=11
    CHECK(cls[20] == 3);  // d=20
    CHECK(cls[40] == 3);

    // All-background: sentinel distance lands in the last class.
    Tensor none({4, 4}, 0.0);
    for (int c : hs2s::border_targets(none, edges)) CHECK(c == 3);

    CHECK_THROWS_AS(hs2s::border_targets(m, {5, 2}), std::invalid_argument);
  }

  TEST_CASE("border targets partition the image and match the oracle") {
    const std::vector<int> edges{2, 5, 10};
    Rng rng(312);
    for (int it = 0; it < 40; ++it) {
      Tensor m = random_mask(14, 14, rng);
      auto cls = hs2s::border_targets(m, edges);
      auto dist = oracle::bfs_distance(m);
      std::vector<int> counts(4, 0);
      for (size_t j = 0; j < cls.size(); ++j) {
        int k = 0;
        for (int e : edges) k += e < dist[j] ? 1 : 0;
        CHECK(cls[j] == k);
        counts[static_cast<size_t>(cls[j])]++;
      }
      CHECK(counts[0] + counts[1] + counts[2] + counts[3] == 14 * 14);
    }
  }

  TEST_CASE("border loss values and oracle match") {
    LossConfig cfg;
    // Near-one-hot logits drive the loss to ~0.
    Tensor targets({1, 2, 2});
    targets.v = {0, 1, 2, 3};
    Tensor logits({1, 4, 2, 2}, -20.0);
    for (int j = 0; j < 4; ++j) {
      const int cls = static_cast<int>(targets.v[j]);
      logits.v[cls * 4 + j] = 20.0;
    }
    ad::Tape t;
    CHECK(t.val(hs2s::border_loss(t.leaf(logits), targets, cfg)).v[0] < 1e-6);

    ad::Tape t2;
    Tensor zeros({1, 4, 2, 2}, 0.0);
    CHECK(t2.val(hs2s::border_loss(t2.leaf(zeros), targets, cfg)).v[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(313);
    for (int it = 0; it < 30; ++it) {
      Tensor lg({2, 4, 3, 3});
      for (double& x : lg.v) x = rng.uniform(-3, 3);
      Tensor tg({2, 3, 3});
      for (double& x : tg.v) x = rng.uniform_int(0, 3);
      ad::Tape t3;
      const double got = t3.val(hs2s::border_loss(t3.leaf(lg), tg, cfg)).v[0];
      CHECK(got == doctest::Approx(oracle::softmax_ce(lg, tg)).epsilon(1e-9));
    }

    // Channel count must match the configured class count.
    ad::Tape t4;
    ad::Var three = t4.leaf(Tensor({1, 3, 2, 2}, 0.0));
    CHECK_THROWS_AS(hs2s::border_loss(three, targets, cfg), std::invalid_argument);
  }

  TEST_CASE("total loss endpoints and weighting") {
    auto combine = [](double s, double a, double lambda) {
      LossConfig cfg;
      cfg.lambda_seg = lambda;
      ad::Tape t;
      Tensor ts({1}), ta({1});
      ts.v[0] = s;
      ta.v[0] = a;
      return t.val(hs2s::total_loss(t.leaf(ts), t.leaf(ta), cfg)).v[0];
    };
    CHECK(combine(1.2345, 9.9, 1.0) == 1.2345);
    CHECK(combine(9.9, 0.7771, 0.0) == 0.7771);
    CHECK(combine(1.0, 0.5, 0.8) == doctest::Approx(0.9).epsilon(1e-12));

    LossConfig cfg;
    ad::Tape t;
    Tensor nan_t({1});
    nan_t.v[0] = std::nan("");
    Tensor ok({1}, 1.0);
    ad::Var vn = t.leaf(nan_t);
    ad::Var vo = t.leaf(ok);
    CHECK_THROWS_AS(hs2s::total_loss(vn, vo, cfg), std::runtime_error);
  }

  TEST_CASE("loss config validation") {
    LossConfig bad;
    bad.lambda_seg = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    LossConfig bad2;
    bad2.border_bin_edges = {2, 2, 5};
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    LossConfig bad3;
    bad3.border_bin_edges = {};
    CHECK_THROWS_AS(bad3.validate(), std::invalid_argument);
    LossConfig good;
    good.validate();  // must not throw
  }
}
