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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hs2s/rng.hpp"

namespace fs = std::filesystem;

namespace hs2s::train {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Per-step seed derived only from (run seed, step) so resumed runs replay
// the remaining steps identically.
uint64_t step_seed(uint64_t run_seed, int64_t step) {
  return run_seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(step) + 1);
}

}  // namespace

void TrainConfig::validate() const {
  // lr = 0 is allowed: it turns training into a (useful for testing)
  // parameter-preserving dry run.
  if (!(lr >= 0.0)) fail_invalid("TrainConfig: lr must be >= 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    fail_invalid("TrainConfig: lr_decay_factor must lie in (0,1]");
  }
  if (plateau_patience < 1) fail_invalid("TrainConfig: plateau_patience must be >= 1");
  if (!(plateau_smoothing >= 0.0 && plateau_smoothing < 1.0)) {
    fail_invalid("TrainConfig: plateau_smoothing must lie in [0,1)");
  }
  if (batch_size < 1) fail_invalid("TrainConfig: batch_size must be >= 1");
  if (max_steps < 0) fail_invalid("TrainConfig: max_steps must be >= 0");
  if (snippet_min < 2 || snippet_min > snippet_max) {
    fail_invalid("TrainConfig: need 2 <= snippet_min <= snippet_max");
  }
  if (!(p_min >= 0.0 && p_min <= 1.0)) fail_invalid("TrainConfig: p_min must lie in [0,1]");
  if (decay_steps < 1) fail_invalid("TrainConfig: decay_steps must be >= 1");
}

double scheduled_p_gt(int64_t step, const TrainConfig& cfg) {
  const double linear = 1.0 - static_cast<double>(step) / static_cast<double>(cfg.decay_steps);
  return std::max(cfg.p_min, linear);
}

std::vector<model::MaskSource> teacher_forcing_policy(const ScheduleState& state,
                                                      const TrainConfig& cfg,
                                                      int snippet_len,
                                                      uint64_t seed) {
  if (snippet_len < 2) fail_invalid("teacher_forcing_policy: snippet_len must be >= 2");
  const double p = scheduled_p_gt(state.step, cfg);
  Rng rng(seed);
  std::vector<model::MaskSource> feed(snippet_len - 1);
  feed[0] = model::MaskSource::kGroundTruth;
  for (size_t i = 1; i < feed.size(); ++i) {
    feed[i] = rng.bernoulli(p) ? model::MaskSource::kGroundTruth
                               : model::MaskSource::kPredicted;
  }
  return feed;
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.v) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.v) x *= scale;
    }
  }
  return norm;
}

SequenceLoss sequence_loss(ad::Tape& t, const model::ParamVars& pv,
                           const synth::SequencePair& snippet,
                           const std::vector<model::MaskSource>& feed,
                           const model::ModelConfig& mcfg, const LossConfig& lcfg) {
  const Tensor& frames = snippet.first.frames;
  const Tensor& masks = snippet.second.masks;
  const int T = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;

  Tensor first_mask({1, h, w});
  std::copy(masks.v.begin(), masks.v.begin() + hw, first_mask.v.begin());

  model::SequenceOutput out =
      model::forward_sequence(t, frames, first_mask, pv, mcfg, feed, &masks);

  ad::Var fg = ad::stack_batch(out.fg_probs);        // [T-1,1,H,W]
  ad::Var aux = ad::stack_batch(out.aux_logits);     // [T-1,K,H,W]

  Tensor gt_tail({T - 1, 1, h, w});
  std::copy(masks.v.begin() + hw, masks.v.end(), gt_tail.v.begin());

  SequenceLoss loss;
  loss.seg = balanced_bce(fg, gt_tail, lcfg);
  const Tensor targets = border_targets_batch(gt_tail, lcfg.border_bin_edges);
  loss.aux = border_loss(aux, targets, lcfg);
  loss.total = total_loss(loss.seg, loss.aux, lcfg);
  return loss;
}

StepMetrics train_step(const std::vector<synth::SequencePair>& batch,
                       model::ParamDict& params, AdamState& opt,
                       ScheduleState& schedule, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, const LossConfig& lcfg,
                       double lr, uint64_t seed) {
  if (batch.empty()) fail_invalid("train_step: empty batch");
  model::check_params(mcfg, params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  StepMetrics metrics;
  metrics.p_gt = scheduled_p_gt(schedule.step, tcfg);
  metrics.lr = lr;

  std::map<std::string, Tensor> grads;
  Rng rng(seed);
  for (const synth::SequencePair& snippet : batch) {
    const uint64_t policy_seed = rng.fork_seed();
    const std::vector<model::MaskSource> feed =
        teacher_forcing_policy(schedule, tcfg, snippet.first.t(), policy_seed);

    ad::Tape tape;
    model::ParamVars pv = model::params_on_tape(tape, params, /*requires_grad=*/true);
    // Attach the sequence id to any numeric failure inside the loss so an
    // aborted run points at the offending sample.
    SequenceLoss loss = [&]() -> SequenceLoss {
      try {
        return sequence_loss(tape, pv, snippet, feed, mcfg, lcfg);
      } catch (const std::runtime_error& e) {
        fail_runtime(strformat("train_step: %s on sequence '%s' at step %lld",
                               e.what(), snippet.first.seq_id.c_str(),
                               static_cast<long long>(schedule.step)));
      }
    }();

    const double lt = tape.val(loss.total).v[0];
    if (!std::isfinite(lt)) {
      fail_runtime(strformat("train_step: non-finite loss on sequence '%s' at step %lld",
                             snippet.first.seq_id.c_str(),
                             static_cast<long long>(schedule.step)));
    }
    metrics.loss_total += lt * inv_b;
    metrics.loss_seg += tape.val(loss.seg).v[0] * inv_b;
    metrics.loss_aux += tape.val(loss.aux).v[0] * inv_b;

    tape.backward(loss.total);
    for (const auto& [name, var] : pv.vars) {
      if (!tape.has_grad(var)) continue;
      const Tensor& g = tape.grad(var);
      auto it = grads.find(name);
      if (it == grads.end()) it = grads.emplace(name, Tensor(g.shape)).first;
      for (size_t j = 0; j < g.v.size(); ++j) it->second.v[j] += g.v[j] * inv_b;
    }
  }

  const double norm = clip_gradients(grads, tcfg.grad_clip_norm);
  if (!std::isfinite(norm)) {
    fail_runtime(strformat("train_step: non-finite gradient at step %lld",
                           static_cast<long long>(schedule.step)));
  }

  opt.t += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.t));
  for (auto& [name, theta] : params) {
    auto mit = opt.m.find(name);
    if (mit == opt.m.end()) mit = opt.m.emplace(name, Tensor(theta.shape)).first;
    auto vit = opt.v.find(name);
    if (vit == opt.v.end()) vit = opt.v.emplace(name, Tensor(theta.shape)).first;
    const auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (size_t j = 0; j < theta.v.size(); ++j) {
      const double gj = g ? g->v[j] : 0.0;
      double& m = mit->second.v[j];
      double& v = vit->second.v[j];
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * gj;
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * gj * gj;
      theta.v[j] -= lr * (m / c1) / (std::sqrt(v / c2) + kAdamEps);
    }
  }

  schedule.step += 1;
  schedule.p_gt = scheduled_p_gt(schedule.step, tcfg);
  metrics.step = schedule.step;
  return metrics;
}

Checkpoint train(const std::vector<synth::SequencePair>& dataset,
                 const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                 const LossConfig& lcfg, const synth::AugConfig& aug,
                 const std::string& out_dir, const Checkpoint* resume) {
  mcfg.validate();
  tcfg.validate();
  lcfg.validate();
  aug.validate();
  if (dataset.empty()) fail_invalid("train: dataset is empty");
  for (const synth::SequencePair& pair : dataset) {
    if (pair.first.t() < tcfg.snippet_min) {
      fail_invalid(strformat("train: sequence '%s' (length %d) is shorter than "
                             "snippet_min=%d",
                             pair.first.seq_id.c_str(), pair.first.t(),
                             tcfg.snippet_min));
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail_runtime(strformat("train: cannot create output dir '%s': %s",
                                 out_dir.c_str(), ec.message().c_str()));

  Checkpoint ckpt;
  if (resume != nullptr) {
    ckpt = *resume;
    model::check_params(mcfg, ckpt.params);
    ckpt.config = mcfg;  // record the config this run actually trains with
  } else {
    ckpt.config = mcfg;
    ckpt.params = model::init_params(mcfg, tcfg.seed);
    ckpt.plateau.lr = tcfg.lr;
    for (const auto& [name, p] : ckpt.params) {
      ckpt.opt.m.emplace(name, Tensor(p.shape));
      ckpt.opt.v.emplace(name, Tensor(p.shape));
    }
  }

  const fs::path csv_path = fs::path(out_dir) / "metrics.csv";
  std::ofstream csv(csv_path, resume ? std::ios::app : std::ios::trunc);
  if (!csv) fail_runtime(strformat("train: cannot write '%s'", csv_path.string().c_str()));
  if (!resume) csv << "step,loss_total,loss_seg,loss_aux,p_gt,lr\n" << std::flush;

  const int n_seq = static_cast<int>(dataset.size());
  while (ckpt.schedule.step < tcfg.max_steps) {
    Rng rng(step_seed(tcfg.seed, ckpt.schedule.step));
    std::vector<synth::SequencePair> batch;
    batch.reserve(tcfg.batch_size);
    for (int b = 0; b < tcfg.batch_size; ++b) {
      const int idx = rng.uniform_int(0, n_seq - 1);
      const int max_len = std::min(tcfg.snippet_max, dataset[idx].first.t());
      synth::SequencePair snip =
          synth::sample_snippet(dataset[idx], tcfg.snippet_min, max_len, rng.fork_seed());
      batch.push_back(synth::augment(snip, aug, rng.fork_seed()));
    }
    const uint64_t policy_seed = rng.fork_seed();

    StepMetrics m;
    try {
      m = train_step(batch, ckpt.params, ckpt.opt, ckpt.schedule, mcfg, tcfg, lcfg,
                     ckpt.plateau.lr, policy_seed);
    } catch (const std::runtime_error&) {
      // The step aborts before touching parameters, so the current state
      // is the last good one; keep it on disk for post-mortems.
      save_checkpoint(ckpt, (fs::path(out_dir) / "ckpt_last_good.bin").string());
      throw;
    }
    ckpt.last_metrics = m;

    PlateauState& pl = ckpt.plateau;
    if (!pl.initialized) {
      pl.smoothed = m.loss_total;
      pl.best = m.loss_total;
      pl.initialized = true;
      pl.wait = 0;
    } else {
      pl.smoothed = tcfg.plateau_smoothing * pl.smoothed +
                    (1.0 - tcfg.plateau_smoothing) * m.loss_total;
      if (pl.smoothed < pl.best - 1e-12) {
        pl.best = pl.smoothed;
        pl.wait = 0;
      } else if (++pl.wait >= tcfg.plateau_patience) {
        pl.lr *= tcfg.lr_decay_factor;
        pl.best = pl.smoothed;
        pl.wait = 0;
      }
    }

    csv << m.step << "," << strformat("%.17g", m.loss_total) << ","
        << strformat("%.17g", m.loss_seg) << "," << strformat("%.17g", m.loss_aux)
        << "," << strformat("%.17g", m.p_gt) << "," << strformat("%.17g", m.lr)
        << "\n"
        << std::flush;

    if (tcfg.checkpoint_every > 0 && ckpt.schedule.step % tcfg.checkpoint_every == 0 &&
        ckpt.schedule.step < tcfg.max_steps) {
      save_checkpoint(ckpt, (fs::path(out_dir) /
                             strformat("ckpt_step_%08lld.bin",
                                       static_cast<long long>(ckpt.schedule.step)))
                                .string());
    }
  }

  save_checkpoint(ckpt, (fs::path(out_dir) / "ckpt_final.bin").string());
  return ckpt;
}

}  // namespace hs2s::train
