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

#include <CLI11.hpp>

#include "hs2s/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "hs2s: recurrent + reference-matching video object segmentation on "
      "synthetic moving-shapes data"};
  app.require_subcommand(1);

  hs2s::cli::GenDataArgs gen;
  CLI::App* cmd_gen =
      app.add_subcommand("gen-data", "Generate a synthetic dataset");
  cmd_gen->add_option("--config", gen.config_path, "JSON run config");
  cmd_gen->add_option("--out", gen.out_dir, "Output dataset directory")
      ->required();
  cmd_gen->add_option("-n,--n-sequences", gen.n_sequences,
                      "Sequence count (overrides data.n_sequences)");
  cmd_gen->add_option("--seed", gen.seed, "Base seed (overrides data.seed)");
  cmd_gen->add_flag("--force", gen.force,
                    "Replace an existing non-empty output directory");

  hs2s::cli::TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "Train a model");
  cmd_train->add_option("--config", train.config_path, "JSON run config");
  cmd_train->add_option("--data", train.data_dir, "Dataset directory")
      ->required();
  cmd_train->add_option("--out", train.out_dir, "Run output directory")
      ->required();
  cmd_train->add_option("--seed", train.seed,
                        "Training seed (overrides train.seed)");
  cmd_train->add_option("--resume", train.resume_path,
                        "Checkpoint file to continue from");

  hs2s::cli::EvalArgs eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("checkpoint", eval.checkpoint, "Checkpoint file")
      ->required();
  cmd_eval->add_option("--data", eval.data_dir, "Dataset directory")
      ->required();
  cmd_eval->add_option("--out", eval.out_dir, "Report output directory")
      ->required();
  cmd_eval->add_option("--config", eval.config_path,
                       "JSON run config (its eval section applies)");
  cmd_eval->add_option("--variant-override", eval.variant_override,
                       "Evaluate under this architecture variant name");

  hs2s::cli::OverlayArgs overlay;
  CLI::App* cmd_overlay =
      app.add_subcommand("overlay", "Render prediction overlays for one sequence");
  cmd_overlay->add_option("checkpoint", overlay.checkpoint, "Checkpoint file")
      ->required();
  cmd_overlay->add_option("sequence_dir", overlay.sequence_dir,
                          "Sequence directory (holds frames/ and masks/)")
      ->required();
  cmd_overlay->add_option("--out", overlay.out_dir, "Overlay output directory")
      ->required();

  hs2s::cli::AblateArgs ablate;
  CLI::App* cmd_ablate = app.add_subcommand(
      "ablate", "Train and evaluate all five architecture variants");
  cmd_ablate->add_option("--config", ablate.config_path, "JSON run config");
  cmd_ablate->add_option("--data", ablate.data_dir, "Dataset directory")
      ->required();
  cmd_ablate->add_option("--out", ablate.out_dir, "Ablation output directory")
      ->required();
  cmd_ablate->add_option("--workers", ablate.num_workers,
                         "Parallel variant processes (default: HS2S_NUM_WORKERS or 1)");

  CLI11_PARSE(app, argc, argv);

  if (cmd_gen->parsed()) return hs2s::cli::cmd_gen_data(gen);
  if (cmd_train->parsed()) return hs2s::cli::cmd_train(train);
  if (cmd_eval->parsed()) return hs2s::cli::cmd_eval(eval);
  if (cmd_overlay->parsed()) return hs2s::cli::cmd_overlay(overlay);
  if (cmd_ablate->parsed()) return hs2s::cli::cmd_ablate(ablate);
  return 1;  // unreachable: require_subcommand(1)
}
