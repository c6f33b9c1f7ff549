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

#include "hs2s/training.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hs2s/rng.hpp"

using namespace hs2s;
namespace md = hs2s::model;
namespace tr = hs2s::train;
namespace fs = std::filesystem;

namespace {

md::ModelConfig tiny_config() {
  md::ModelConfig cfg;
  cfg.in_h = cfg.in_w = 32;
  cfg.base_channels = 2;
  cfg.bottleneck_channels = 4;
  cfg.decoder_channels = {8, 8, 4, 4, 4};
  return cfg;
}

tr::TrainConfig tiny_train_config() {
  tr::TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.snippet_min = 3;
  cfg.snippet_max = 4;
  cfg.decay_steps = 10;
  cfg.seed = 7;
  return cfg;
}

std::vector<synth::SequencePair> tiny_dataset(int n, int t = 5) {
  std::vector<synth::SequencePair> data;
  for (int i = 0; i < n; ++i) {
    synth::SynthConfig cfg;
    cfg.h = cfg.w = 32;
    cfg.t = t;
    cfg.seed = 1000 + static_cast<uint64_t>(i);
    data.push_back(synth::generate_sequence(cfg));
  }
  return data;
}

bool params_equal(const md::ParamDict& a, const md::ParamDict& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second.shape != t.shape || it->second.v != t.v) return false;
  }
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           strformat("hs2s_%s_%d_%d", tag.c_str(), static_cast<int>(::getpid()), counter++);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

tr::Checkpoint small_checkpoint(uint64_t seed) {
  tr::Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.params = md::init_params(ckpt.config, seed);
  Rng rng(seed + 1);
  for (const auto& [name, p] : ckpt.params) {
    Tensor m(p.shape), v(p.shape);
    for (double& x : m.v) x = rng.uniform(-1, 1);
    for (double& x : v.v) x = rng.uniform(0, 1);
    ckpt.opt.m.emplace(name, std::move(m));
    ckpt.opt.v.emplace(name, std::move(v));
  }
  ckpt.opt.t = 42;
  ckpt.schedule = {17, 0.375};
  ckpt.plateau = {1e-4, 2.5, 2.25, true, 9};
  ckpt.last_metrics = {17, 2.5, 2.0, 4.5, 0.375, 1e-4};
  return ckpt;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("train config validation") {
  tr::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  tr::TrainConfig ok0 = cfg;
  ok0.lr = 0.0;  // dry-run mode is legal
  CHECK_NOTHROW(ok0.validate());

  tr::TrainConfig bad = cfg;
  bad.lr = -1e-4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lr_decay_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lr_decay_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.plateau_patience = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.plateau_smoothing = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.max_steps = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.snippet_min = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.snippet_min = 8;
  bad.snippet_max = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.p_min = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.decay_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("feed probability decays linearly to its floor") {
  tr::TrainConfig cfg;
  cfg.p_min = 0.1;
  cfg.decay_steps = 1000;
  CHECK(tr::scheduled_p_gt(0, cfg) == 1.0);
  CHECK(tr::scheduled_p_gt(500, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tr::scheduled_p_gt(1000, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(tr::scheduled_p_gt(5000, cfg) == doctest::Approx(0.1).epsilon(1e-12));

  double prev = 1.0;
  for (int64_t s = 0; s <= 1200; s += 7) {
    const double p = tr::scheduled_p_gt(s, cfg);
    CHECK(p <= prev);
    CHECK(p >= cfg.p_min);
    CHECK(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("feed policy draws per frame with the scheduled probability") {
  tr::TrainConfig cfg;
  cfg.p_min = 0.1;
  cfg.decay_steps = 1000;

  SUBCASE("step 0 always feeds ground truth") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      for (const auto s : tr::teacher_forcing_policy({0, 1.0}, cfg, 8, seed)) {
        CHECK(s == md::MaskSource::kGroundTruth);
      }
    }
  }

  SUBCASE("entry 0 stays ground truth even at the floor") {
    int pred_seen = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
      const auto policy = tr::teacher_forcing_policy({100000, 0.1}, cfg, 6, seed);
      REQUIRE(policy.size() == 5);
      CHECK(policy[0] == md::MaskSource::kGroundTruth);
      for (size_t i = 1; i < policy.size(); ++i) {
        pred_seen += policy[i] == md::MaskSource::kPredicted;
      }
    }
    CHECK(pred_seen > 0);
  }

  SUBCASE("empirical rate matches p_gt = 0.5 within 0.02") {
    // Step 500 of a 1000-step decay sits exactly at p_gt = 0.5.
    int64_t gt = 0, total = 0;
    for (uint64_t seed = 0; seed < 2000; ++seed) {
      const auto policy = tr::teacher_forcing_policy({500, 0.5}, cfg, 7, seed);
      for (size_t i = 1; i < policy.size(); ++i) {  // entry 0 is forced
        gt += policy[i] == md::MaskSource::kGroundTruth;
        ++total;
      }
    }
    REQUIRE(total == 2000 * 5);
    const double rate = static_cast<double>(gt) / total;
    CHECK(rate > 0.48);
    CHECK(rate < 0.52);
  }

  SUBCASE("deterministic in the seed") {
    const auto a = tr::teacher_forcing_policy({300, 0.7}, cfg, 10, 99);
    const auto b = tr::teacher_forcing_policy({300, 0.7}, cfg, 10, 99);
    CHECK(a == b);
  }
}

TEST_CASE("gradient clipping caps the global norm") {
  Rng rng(5150);
  for (int it = 0; it < 30; ++it) {
    std::map<std::string, Tensor> grads;
    for (int k = 0; k < 3; ++k) {
      Tensor g({2, 3});
      for (double& x : g.v) x = rng.uniform(-4, 4);
      grads.emplace(strformat("g%d", k), std::move(g));
    }
    std::map<std::string, Tensor> orig = grads;
    const double max_norm = rng.uniform(0.5, 6.0);
    const double pre = tr::clip_gradients(grads, max_norm);

    double post_sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double x : g.v) post_sq += x * x;
    const double post = std::sqrt(post_sq);
    CHECK(post <= max_norm + 1e-6);
    if (pre <= max_norm) {
      // Below the cap nothing moves.
      for (const auto& [name, g] : grads) CHECK(g.v == orig.at(name).v);
    } else {
      CHECK(post == doctest::Approx(max_norm).epsilon(1e-9));
    }
  }

  // Disabled clipping leaves even huge gradients alone.
  std::map<std::string, Tensor> big;
  Tensor g({4});
  g.v = {100, 100, 100, 100};
  big.emplace("g", g);
  tr::clip_gradients(big, 0.0);
  CHECK(big.at("g").v == g.v);
}

TEST_CASE("one optimizer step behaves by the book") {
  const md::ModelConfig mcfg = tiny_config();
  tr::TrainConfig tcfg = tiny_train_config();
  LossConfig lcfg;
  std::vector<synth::SequencePair> data = tiny_dataset(2, 4);

  SUBCASE("zero learning rate leaves parameters untouched") {
    md::ParamDict params = md::init_params(mcfg, 3);
    const md::ParamDict before = params;
    tr::AdamState opt;
    tr::ScheduleState sched;
    tr::StepMetrics m =
        tr::train_step(data, params, opt, sched, mcfg, tcfg, lcfg, /*lr=*/0.0, 11);
    CHECK(params_equal(params, before));
    CHECK(sched.step == 1);
    CHECK(opt.t == 1);
    CHECK(std::isfinite(m.loss_total));
    CHECK(m.loss_total > 0.0);
    CHECK(m.p_gt == 1.0);
  }

  SUBCASE("identical inputs give identical updates") {
    md::ParamDict p1 = md::init_params(mcfg, 3);
    md::ParamDict p2 = p1;
    tr::AdamState o1, o2;
    tr::ScheduleState s1, s2;
    tr::StepMetrics m1 =
        tr::train_step(data, p1, o1, s1, mcfg, tcfg, lcfg, 1e-3, 11);
    tr::StepMetrics m2 =
        tr::train_step(data, p2, o2, s2, mcfg, tcfg, lcfg, 1e-3, 11);
    CHECK(params_equal(p1, p2));
    CHECK(m1.loss_total == m2.loss_total);
    CHECK(params_equal(o1.m, o2.m));
    CHECK(params_equal(o1.v, o2.v));
  }

  SUBCASE("two steps on a fixed batch reduce the loss for most seeds") {
    int improved = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      md::ParamDict params = md::init_params(mcfg, seed);
      tr::AdamState opt;
      tr::ScheduleState sched;
      tr::StepMetrics first =
          tr::train_step(data, params, opt, sched, mcfg, tcfg, lcfg, 1e-3, seed);
      tr::StepMetrics second =
          tr::train_step(data, params, opt, sched, mcfg, tcfg, lcfg, 1e-3, seed);
      if (second.loss_total < first.loss_total) ++improved;
    }
    CHECK(improved >= 4);
  }

  SUBCASE("non-finite parameters are rejected before any work") {
    md::ParamDict params = md::init_params(mcfg, 3);
    params.begin()->second.v[0] = std::numeric_limits<double>::quiet_NaN();
    tr::AdamState opt;
    tr::ScheduleState sched;
    CHECK_THROWS_WITH_AS(
        tr::train_step(data, params, opt, sched, mcfg, tcfg, lcfg, 1e-3, 11),
        doctest::Contains("non-finite"), std::runtime_error);
    CHECK(sched.step == 0);
  }

  SUBCASE("non-finite loss aborts naming the sequence, parameters untouched") {
    // Finite but absurdly large weights pass the entry check, then overflow
    // during the forward pass so the loss itself goes non-finite.
    md::ParamDict params = md::init_params(mcfg, 3);
    for (auto& [name, t] : params)
      for (double& x : t.v) x = 1e200;
    const md::ParamDict before = params;
    tr::AdamState opt;
    tr::ScheduleState sched;
    CHECK_THROWS_WITH_AS(
        tr::train_step(data, params, opt, sched, mcfg, tcfg, lcfg, 1e-3, 11),
        doctest::Contains(data[0].first.seq_id.c_str()), std::runtime_error);
    CHECK(params_equal(params, before));
    CHECK(sched.step == 0);
  }
}

TEST_CASE("full training loop contracts") {
  const md::ModelConfig mcfg = tiny_config();
  tr::TrainConfig tcfg = tiny_train_config();
  LossConfig lcfg;
  synth::AugConfig aug;  // identity: keeps these loops cheap and exact
  std::vector<synth::SequencePair> data = tiny_dataset(2, 5);

  SUBCASE("zero steps returns initialized parameters and a bare log") {
    TempDir dir("train0");
    tcfg.max_steps = 0;
    tr::Checkpoint ckpt = tr::train(data, mcfg, tcfg, lcfg, aug, dir.str());
    CHECK(params_equal(ckpt.params, md::init_params(mcfg, tcfg.seed)));
    CHECK(slurp(dir.path / "metrics.csv") == "step,loss_total,loss_seg,loss_aux,p_gt,lr\n");
    CHECK(fs::exists(dir.path / "ckpt_final.bin"));
  }

  SUBCASE("zero learning rate is the identity on parameters") {
    TempDir dir("trainlr0");
    tcfg.max_steps = 2;
    tcfg.lr = 0.0;
    tr::Checkpoint ckpt = tr::train(data, mcfg, tcfg, lcfg, aug, dir.str());
    CHECK(params_equal(ckpt.params, md::init_params(mcfg, tcfg.seed)));
    CHECK(ckpt.schedule.step == 2);
  }

  SUBCASE("reruns reproduce checkpoints and logs byte for byte") {
    TempDir a("traina"), b("trainb");
    tcfg.max_steps = 3;
    tcfg.checkpoint_every = 2;
    tr::train(data, mcfg, tcfg, lcfg, aug, a.str());
    tr::train(data, mcfg, tcfg, lcfg, aug, b.str());
    CHECK(slurp(a.path / "metrics.csv") == slurp(b.path / "metrics.csv"));
    CHECK(slurp(a.path / "ckpt_final.bin") == slurp(b.path / "ckpt_final.bin"));
    CHECK(fs::exists(a.path / "ckpt_step_00000002.bin"));
    // Loss at every logged step is finite and positive.
    std::istringstream csv(slurp(a.path / "metrics.csv"));
    std::string line;
    std::getline(csv, line);  // header
    int rows = 0;
    while (std::getline(csv, line)) {
      ++rows;
      const auto comma = line.find(',');
      const double loss = std::stod(line.substr(comma + 1));
      CHECK(std::isfinite(loss));
      CHECK(loss > 0.0);
    }
    CHECK(rows == 3);
  }

  SUBCASE("a resumed run replays exactly like an uninterrupted one") {
    TempDir whole("whole"), parts("parts");
    tcfg.max_steps = 4;
    tr::train(data, mcfg, tcfg, lcfg, aug, whole.str());

    tr::TrainConfig half = tcfg;
    half.max_steps = 2;
    tr::train(data, mcfg, half, lcfg, aug, parts.str());
    tr::Checkpoint mid =
        tr::load_checkpoint((parts.path / "ckpt_final.bin").string());
    CHECK(mid.schedule.step == 2);
    tr::train(data, mcfg, tcfg, lcfg, aug, parts.str(), &mid);

    CHECK(slurp(whole.path / "ckpt_final.bin") == slurp(parts.path / "ckpt_final.bin"));
    CHECK(slurp(whole.path / "metrics.csv") == slurp(parts.path / "metrics.csv"));
  }

  SUBCASE("empty dataset is rejected") {
    TempDir dir("empty");
    CHECK_THROWS_AS(tr::train({}, mcfg, tcfg, lcfg, aug, dir.str()),
                    std::invalid_argument);
  }
}

TEST_CASE("plateau rule decays the learning rate when loss stalls") {
  // With an essentially zero learning rate the parameters never move, so the
  // per-step losses only wobble with the random snippet draw. Patience 1 over
  // a dozen steps must then shrink the learning rate at least once, and every
  // shrink is exactly one halving.
  const md::ModelConfig mcfg = tiny_config();
  tr::TrainConfig tcfg = tiny_train_config();
  tcfg.max_steps = 12;
  tcfg.lr = 1e-9;
  tcfg.plateau_patience = 1;
  tcfg.lr_decay_factor = 0.5;
  LossConfig lcfg;
  synth::AugConfig aug;
  TempDir dir("plateau");
  tr::Checkpoint ckpt =
      tr::train(tiny_dataset(1, 5), mcfg, tcfg, lcfg, aug, dir.str());
  CHECK(ckpt.plateau.lr < tcfg.lr);
  const double halvings = std::log2(tcfg.lr / ckpt.plateau.lr);
  CHECK(std::abs(halvings - std::round(halvings)) < 1e-9);
  CHECK(halvings >= 1.0);
  CHECK(halvings <= 11.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  tr::Checkpoint ckpt = small_checkpoint(12);
  TempDir dir("ckpt");
  const std::string path = (dir.path / "c.bin").string();
  tr::save_checkpoint(ckpt, path);
  tr::Checkpoint back = tr::load_checkpoint(path);

  CHECK(params_equal(back.params, ckpt.params));
  CHECK(params_equal(back.opt.m, ckpt.opt.m));
  CHECK(params_equal(back.opt.v, ckpt.opt.v));
  CHECK(back.opt.t == ckpt.opt.t);
  CHECK(back.schedule.step == ckpt.schedule.step);
  CHECK(back.schedule.p_gt == ckpt.schedule.p_gt);
  CHECK(back.plateau.lr == ckpt.plateau.lr);
  CHECK(back.plateau.smoothed == ckpt.plateau.smoothed);
  CHECK(back.plateau.best == ckpt.plateau.best);
  CHECK(back.plateau.initialized == ckpt.plateau.initialized);
  CHECK(back.plateau.wait == ckpt.plateau.wait);
  CHECK(back.last_metrics.loss_total == ckpt.last_metrics.loss_total);
  CHECK(back.config.in_h == ckpt.config.in_h);
  CHECK(back.config.variant == ckpt.config.variant);
  CHECK(back.config.decoder_channels == ckpt.config.decoder_channels);

  // Saving the loaded copy reproduces the file byte for byte.
  const std::string path2 = (dir.path / "c2.bin").string();
  tr::save_checkpoint(back, path2);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint loader rejects damaged files distinctly") {
  tr::Checkpoint ckpt = small_checkpoint(13);
  TempDir dir("ckpterr");
  const std::string good = (dir.path / "good.bin").string();
  tr::save_checkpoint(ckpt, good);
  const std::string bytes = slurp(good);

  SUBCASE("truncation") {
    const std::string path = (dir.path / "trunc.bin").string();
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_WITH_AS(tr::load_checkpoint(path), doctest::Contains("corrupt"),
                         std::runtime_error);
  }

  SUBCASE("bad magic") {
    std::string mangled = bytes;
    mangled[0] = 'X';
    const std::string path = (dir.path / "magic.bin").string();
    std::ofstream(path, std::ios::binary) << mangled;
    CHECK_THROWS_WITH_AS(tr::load_checkpoint(path), doctest::Contains("bad magic"),
                         std::runtime_error);
  }

  SUBCASE("version mismatch") {
    std::string mangled = bytes;
    mangled[8] = static_cast<char>(9);  // little-endian version field
    const std::string path = (dir.path / "ver.bin").string();
    std::ofstream(path, std::ios::binary) << mangled;
    CHECK_THROWS_WITH_AS(tr::load_checkpoint(path),
                         doctest::Contains("unsupported version"), std::runtime_error);
  }

  SUBCASE("trailing garbage") {
    const std::string path = (dir.path / "trail.bin").string();
    std::ofstream(path, std::ios::binary) << bytes << 'Z';
    CHECK_THROWS_WITH_AS(tr::load_checkpoint(path), doctest::Contains("trailing"),
                         std::runtime_error);
  }

  SUBCASE("shape mismatch names the tensor") {
    tr::Checkpoint wrong = ckpt;
    const std::string victim = wrong.params.begin()->first;
    wrong.params.begin()->second = Tensor({1, 1, 1, 1});
    const std::string path = (dir.path / "shape.bin").string();
    tr::save_checkpoint(wrong, path);
    CHECK_THROWS_WITH_AS(tr::load_checkpoint(path), doctest::Contains(victim.c_str()),
                         std::runtime_error);
  }

  SUBCASE("missing parameter tensor") {
    tr::Checkpoint wrong = ckpt;
    wrong.params.erase(wrong.params.begin());
    wrong.opt.m.erase(wrong.opt.m.begin());
    wrong.opt.v.erase(wrong.opt.v.begin());
    const std::string path = (dir.path / "missing.bin").string();
    tr::save_checkpoint(wrong, path);
    CHECK_THROWS_AS(tr::load_checkpoint(path), std::runtime_error);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(tr::load_checkpoint((dir.path / "nope.bin").string()),
                    std::runtime_error);
  }
}

}  // TEST_SUITE
