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

#ifndef HS2S_CLI_HPP
#define HS2S_CLI_HPP

#include <optional>
#include <string>
#include <vector>

#include "hs2s/eval.hpp"
#include "hs2s/run_config.hpp"
#include "hs2s/training.hpp"

namespace hs2s::cli {

// Inference for one sequence: all-predicted mask feedback after the given
// first-frame mask. Returns soft probabilities [T-1,1,H,W] for frames 1..T-1.
Tensor infer_probs(const model::ModelConfig& cfg, const model::ParamDict& params,
                   const synth::SequencePair& pair);

// Runs inference over a whole dataset and assembles the metrics report.
eval::MetricsReport evaluate_dataset(const model::ModelConfig& cfg,
                                     const model::ParamDict& params,
                                     const std::vector<synth::SequencePair>& dataset,
                                     const eval::EvalParams& params_eval);

// Subcommand entry points. Each returns a process exit code (0 = success),
// reports failures on stderr, and writes the fully-resolved config it ran
// with into its output directory. An empty config_path means "all defaults".

struct GenDataArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<int> n_sequences;    // overrides data.n_sequences
  std::optional<uint64_t> seed;      // overrides data.seed
  bool force = false;                // allow writing into a non-empty out_dir
};
int cmd_gen_data(const GenDataArgs& args);

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string resume_path;           // checkpoint to continue from (optional)
  std::optional<uint64_t> seed;      // overrides train.seed
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string out_dir;
  std::string config_path;           // used for the eval section (optional)
  std::string variant_override;      // evaluate under this variant name
};
int cmd_eval(const EvalArgs& args);

struct OverlayArgs {
  std::string checkpoint;
  std::string sequence_dir;
  std::string out_dir;
};
int cmd_overlay(const OverlayArgs& args);

struct AblateArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  // Parallel worker processes; 0 means "use HS2S_NUM_WORKERS or 1".
  int num_workers = 0;
};
int cmd_ablate(const AblateArgs& args);

}  // namespace hs2s::cli

#endif  // HS2S_CLI_HPP
