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

#ifndef HS2S_RUN_CONFIG_HPP
#define HS2S_RUN_CONFIG_HPP

#include <string>

#include <json.hpp>

#include "hs2s/eval.hpp"
#include "hs2s/losses.hpp"
#include "hs2s/model.hpp"
#include "hs2s/synthdata.hpp"
#include "hs2s/training.hpp"

namespace hs2s::cli {

// Dataset-generation settings. `base` carries the per-sequence geometry;
// the extra fields control how gen-data turns it into a whole dataset.
struct DataConfig {
  synth::SynthConfig base;
  int n_sequences = 4;
  // "mixed" cycles square/circle/triangle across sequences; otherwise a
  // single shape name pins every sequence to that kind.
  std::string shapes = "mixed";
  // When enabled, each sequence hides the target once for a random
  // inclusive interval of occlusion_min_len..occlusion_max_len frames.
  bool occlusion_enabled = false;
  int occlusion_min_len = 4;
  int occlusion_max_len = 8;

  void validate() const;
  // Fully-resolved generator config for sequence `index` of the dataset.
  synth::SynthConfig sequence_config(int index) const;
};

// One config document covering every stage of a run. All fields are
// optional in the JSON form and default to the values declared here;
// unknown keys anywhere in the document are rejected.
struct RunConfig {
  DataConfig data;
  synth::AugConfig aug;
  model::ModelConfig model;
  LossConfig loss;
  train::TrainConfig train;
  eval::EvalParams eval;

  void validate() const;
};

// Parses a document, filling unset fields with defaults. Throws
// std::invalid_argument naming the section and key on unknown keys or
// ill-typed values.
RunConfig parse_run_config(const nlohmann::json& doc);

// Emits the fully-resolved document (every field present). Feeding the
// result back through parse_run_config reproduces the config exactly.
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Reads and parses a JSON config file.
RunConfig load_run_config(const std::string& path);

// Writes the fully-resolved config to `path` (trailing newline included).
void write_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace hs2s::cli

#endif  // HS2S_RUN_CONFIG_HPP
