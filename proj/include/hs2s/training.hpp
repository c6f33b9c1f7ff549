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

#ifndef HS2S_TRAINING_HPP
#define HS2S_TRAINING_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hs2s/losses.hpp"
#include "hs2s/model.hpp"
#include "hs2s/synthdata.hpp"

namespace hs2s::train {

struct TrainConfig {
  double lr = 1e-4;
  // Plateau rule: when the smoothed loss fails to improve for
  // plateau_patience consecutive steps, multiply lr by lr_decay_factor.
  double lr_decay_factor = 0.5;
  int64_t plateau_patience = 200;
  double plateau_smoothing = 0.9;  // EMA keep-rate of the smoothed loss
  int batch_size = 4;
  int64_t max_steps = 1000;
  int snippet_min = 5;
  int snippet_max = 10;
  // Probability of feeding the ground-truth mask decays linearly from 1
  // to p_min over decay_steps optimization steps.
  double p_min = 0.1;
  int64_t decay_steps = 1000;
  uint64_t seed = 0;
  double grad_clip_norm = 5.0;  // <= 0 disables clipping
  int64_t checkpoint_every = 500;  // <= 0: only the final checkpoint

  void validate() const;
};

struct ScheduleState {
  int64_t step = 0;
  double p_gt = 1.0;
};

struct AdamState {
  int64_t t = 0;  // number of applied updates (for bias correction)
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// Learning-rate scalars that must survive a checkpoint so a resumed run
// continues exactly where the original left off.
struct PlateauState {
  double lr = 0.0;
  double smoothed = 0.0;
  double best = 0.0;
  bool initialized = false;
  int64_t wait = 0;
};

struct StepMetrics {
  int64_t step = 0;
  double loss_total = 0.0;
  double loss_seg = 0.0;
  double loss_aux = 0.0;
  double p_gt = 1.0;
  double lr = 0.0;
};

struct Checkpoint {
  model::ModelConfig config;
  model::ParamDict params;
  AdamState opt;
  ScheduleState schedule;
  PlateauState plateau;
  StepMetrics last_metrics;
};

// max(p_min, 1 - step/decay_steps).
double scheduled_p_gt(int64_t step, const TrainConfig& cfg);

// One feed decision per predicted step (snippet_len - 1 entries), drawn
// independently with probability p_gt(state.step); entry 0 is always
// ground truth because the first prediction can only see the given mask.
std::vector<model::MaskSource> teacher_forcing_policy(const ScheduleState& state,
                                                      const TrainConfig& cfg,
                                                      int snippet_len,
                                                      uint64_t seed);

struct SequenceLoss {
  ad::Var total;
  ad::Var seg;
  ad::Var aux;
};

// Rolls one snippet forward under the given feed policy and builds the
// combined loss: balanced cross-entropy over the stacked predictions plus
// the border-classification term, weighted by the loss config.
SequenceLoss sequence_loss(ad::Tape& t, const model::ParamVars& pv,
                           const synth::SequencePair& snippet,
                           const std::vector<model::MaskSource>& feed,
                           const model::ModelConfig& mcfg, const LossConfig& lcfg);

// Scales all gradients by max_norm/norm when their global L2 norm
// exceeds max_norm (max_norm <= 0 disables). Returns the pre-clip norm.
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

// One optimizer step on a batch of snippets: per-snippet rollouts with
// freshly drawn feed policies, batch-averaged loss, global-norm gradient
// clipping, adaptive-moment update at the given lr. Mutates params, opt
// and schedule in place; aborts (without mutating) on non-finite loss.
StepMetrics train_step(const std::vector<synth::SequencePair>& batch,
                       model::ParamDict& params, AdamState& opt,
                       ScheduleState& schedule, const model::ModelConfig& mcfg,
                       const TrainConfig& tcfg, const LossConfig& lcfg,
                       double lr, uint64_t seed);

// Full loop: sample snippets, augment, step, decay lr on plateaus, write
// out_dir/metrics.csv and periodic checkpoints, return the final state.
// Per-step randomness depends only on (seed, step), so a run resumed from
// a checkpoint replays exactly like an uninterrupted one.
Checkpoint train(const std::vector<synth::SequencePair>& dataset,
                 const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                 const LossConfig& lcfg, const synth::AugConfig& aug,
                 const std::string& out_dir, const Checkpoint* resume = nullptr);

// Versioned binary container; every tensor and counter round-trips
// bit-exactly. Loading validates the version and checks each parameter
// against the stored model config.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hs2s::train

#endif  // HS2S_TRAINING_HPP
