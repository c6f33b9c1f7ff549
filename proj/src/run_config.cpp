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

#include "hs2s/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <string>

#include "hs2s/common.hpp"
#include "hs2s/rng.hpp"

namespace hs2s::cli {

using nlohmann::json;

namespace {

void require_object(const json& j, const char* section) {
  if (!j.is_object()) {
    fail_invalid(strformat("config: section '%s' must be an object", section));
  }
}

void check_keys(const json& j, const char* section,
                std::initializer_list<const char*> allowed) {
  require_object(j, section);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      fail_invalid(strformat("config: unknown key '%s' in section '%s'",
                             item.key().c_str(), section));
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, const char* section, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    fail_invalid(strformat("config: bad value for '%s' in section '%s': %s",
                           key, section, e.what()));
  }
}

void parse_data(const json& j, DataConfig& d) {
  check_keys(j, "data",
             {"h", "w", "t", "n_distractors", "motion_speed", "seed",
              "n_sequences", "shapes", "occlusion"});
  read_field(j, "h", "data", d.base.h);
  read_field(j, "w", "data", d.base.w);
  read_field(j, "t", "data", d.base.t);
  read_field(j, "n_distractors", "data", d.base.n_distractors);
  read_field(j, "motion_speed", "data", d.base.motion_speed);
  read_field(j, "seed", "data", d.base.seed);
  read_field(j, "n_sequences", "data", d.n_sequences);
  read_field(j, "shapes", "data", d.shapes);
  if (j.contains("occlusion")) {
    const json& o = j.at("occlusion");
    check_keys(o, "data.occlusion", {"enabled", "min_len", "max_len"});
    read_field(o, "enabled", "data.occlusion", d.occlusion_enabled);
    read_field(o, "min_len", "data.occlusion", d.occlusion_min_len);
    read_field(o, "max_len", "data.occlusion", d.occlusion_max_len);
  }
}

void parse_aug(const json& j, synth::AugConfig& a) {
  check_keys(j, "aug",
             {"hflip_prob", "max_rotation", "max_translation", "max_scale_delta"});
  read_field(j, "hflip_prob", "aug", a.hflip_prob);
  read_field(j, "max_rotation", "aug", a.max_rotation);
  read_field(j, "max_translation", "aug", a.max_translation);
  read_field(j, "max_scale_delta", "aug", a.max_scale_delta);
}

void parse_model(const json& j, model::ModelConfig& m) {
  check_keys(j, "model",
             {"in_h", "in_w", "base_channels", "bottleneck_channels",
              "rnn_kernel", "gc_kernel", "decoder_channels", "aux_classes",
              "variant", "use_skip_rnn", "cell_activation"});
  read_field(j, "in_h", "model", m.in_h);
  read_field(j, "in_w", "model", m.in_w);
  read_field(j, "base_channels", "model", m.base_channels);
  read_field(j, "bottleneck_channels", "model", m.bottleneck_channels);
  read_field(j, "rnn_kernel", "model", m.rnn_kernel);
  read_field(j, "gc_kernel", "model", m.gc_kernel);
  read_field(j, "decoder_channels", "model", m.decoder_channels);
  read_field(j, "aux_classes", "model", m.aux_classes);
  read_field(j, "use_skip_rnn", "model", m.use_skip_rnn);
  if (j.contains("variant")) {
    std::string name;
    read_field(j, "variant", "model", name);
    m.variant = model::variant_from_name(name);
  }
  if (j.contains("cell_activation")) {
    std::string name;
    read_field(j, "cell_activation", "model", name);
    m.cell_activation = model::cell_activation_from_name(name);
  }
}

void parse_loss(const json& j, LossConfig& l) {
  check_keys(j, "loss",
             {"lambda_seg", "eps", "border_bin_edges", "beta_per_frame"});
  read_field(j, "lambda_seg", "loss", l.lambda_seg);
  read_field(j, "eps", "loss", l.eps);
  read_field(j, "border_bin_edges", "loss", l.border_bin_edges);
  read_field(j, "beta_per_frame", "loss", l.beta_per_frame);
}

void parse_train(const json& j, train::TrainConfig& t) {
  check_keys(j, "train",
             {"lr", "lr_decay_factor", "plateau_patience", "plateau_smoothing",
              "batch_size", "max_steps", "snippet_min", "snippet_max", "p_min",
              "decay_steps", "seed", "grad_clip_norm", "checkpoint_every"});
  read_field(j, "lr", "train", t.lr);
  read_field(j, "lr_decay_factor", "train", t.lr_decay_factor);
  read_field(j, "plateau_patience", "train", t.plateau_patience);
  read_field(j, "plateau_smoothing", "train", t.plateau_smoothing);
  read_field(j, "batch_size", "train", t.batch_size);
  read_field(j, "max_steps", "train", t.max_steps);
  read_field(j, "snippet_min", "train", t.snippet_min);
  read_field(j, "snippet_max", "train", t.snippet_max);
  read_field(j, "p_min", "train", t.p_min);
  read_field(j, "decay_steps", "train", t.decay_steps);
  read_field(j, "seed", "train", t.seed);
  read_field(j, "grad_clip_norm", "train", t.grad_clip_norm);
  read_field(j, "checkpoint_every", "train", t.checkpoint_every);
}

void parse_eval(const json& j, eval::EvalParams& e) {
  check_keys(j, "eval",
             {"tol_fraction", "early_cut", "late_cut", "min_len",
              "occlusion_thresholds"});
  read_field(j, "tol_fraction", "eval", e.tol_fraction);
  read_field(j, "early_cut", "eval", e.early_cut);
  read_field(j, "late_cut", "eval", e.late_cut);
  read_field(j, "min_len", "eval", e.min_len);
  read_field(j, "occlusion_thresholds", "eval", e.occlusion_thresholds);
}

}  // namespace

void DataConfig::validate() const {
  base.validate();
  if (n_sequences < 0) fail_invalid("config: data.n_sequences must be >= 0");
  if (shapes != "mixed") {
    synth::shape_kind_from_name(shapes);  // throws on unknown names
  }
  if (occlusion_enabled) {
    if (occlusion_min_len < 2 || occlusion_min_len > occlusion_max_len) {
      fail_invalid("config: data.occlusion needs 2 <= min_len <= max_len");
    }
    if (occlusion_max_len > base.t - 2) {
      fail_invalid(strformat(
          "config: data.occlusion.max_len %d does not fit t=%d "
          "(the target must be visible in the first and last frame)",
          occlusion_max_len, base.t));
    }
  }
}

synth::SynthConfig DataConfig::sequence_config(int index) const {
  synth::SynthConfig c = base;
  c.seed = base.seed + static_cast<uint64_t>(index);
  if (shapes == "mixed") {
    constexpr synth::ShapeKind kCycle[] = {synth::ShapeKind::kSquare,
                                           synth::ShapeKind::kCircle,
                                           synth::ShapeKind::kTriangle};
    c.shape_kind = kCycle[index % 3];
  } else {
    c.shape_kind = synth::shape_kind_from_name(shapes);
  }
  if (occlusion_enabled) {
    // Draw from a stream decorrelated from the sequence content stream.
    Rng occ(c.seed ^ 0x0cc10cc10cc10cc1ULL);
    const int len = occ.uniform_int(occlusion_min_len, occlusion_max_len);
    const int start = occ.uniform_int(1, base.t - 1 - len);
    c.occlusion_interval = {start, start + len - 1};
  }
  return c;
}

void RunConfig::validate() const {
  data.validate();
  aug.validate();
  model.validate();
  loss.validate();
  train.validate();
  if (eval.tol_fraction <= 0.0) {
    fail_invalid("config: eval.tol_fraction must be > 0");
  }
  if (eval.early_cut < 1 || eval.late_cut < eval.early_cut) {
    fail_invalid("config: eval cuts need 1 <= early_cut <= late_cut");
  }
  if (eval.min_len < 2) fail_invalid("config: eval.min_len must be >= 2");
  for (double th : eval.occlusion_thresholds) {
    if (th < 0.0) fail_invalid("config: eval.occlusion_thresholds must be >= 0");
  }
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, "(top level)", {"data", "aug", "model", "loss", "train", "eval"});
  RunConfig cfg;
  if (doc.contains("data")) parse_data(doc.at("data"), cfg.data);
  if (doc.contains("aug")) parse_aug(doc.at("aug"), cfg.aug);
  if (doc.contains("model")) parse_model(doc.at("model"), cfg.model);
  if (doc.contains("loss")) parse_loss(doc.at("loss"), cfg.loss);
  if (doc.contains("train")) parse_train(doc.at("train"), cfg.train);
  if (doc.contains("eval")) parse_eval(doc.at("eval"), cfg.eval);
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json doc;
  doc["data"] = {{"h", cfg.data.base.h},
                 {"w", cfg.data.base.w},
                 {"t", cfg.data.base.t},
                 {"n_distractors", cfg.data.base.n_distractors},
                 {"motion_speed", cfg.data.base.motion_speed},
                 {"seed", cfg.data.base.seed},
                 {"n_sequences", cfg.data.n_sequences},
                 {"shapes", cfg.data.shapes},
                 {"occlusion",
                  {{"enabled", cfg.data.occlusion_enabled},
                   {"min_len", cfg.data.occlusion_min_len},
                   {"max_len", cfg.data.occlusion_max_len}}}};
  doc["aug"] = {{"hflip_prob", cfg.aug.hflip_prob},
                {"max_rotation", cfg.aug.max_rotation},
                {"max_translation", cfg.aug.max_translation},
                {"max_scale_delta", cfg.aug.max_scale_delta}};
  doc["model"] = {{"in_h", cfg.model.in_h},
                  {"in_w", cfg.model.in_w},
                  {"base_channels", cfg.model.base_channels},
                  {"bottleneck_channels", cfg.model.bottleneck_channels},
                  {"rnn_kernel", cfg.model.rnn_kernel},
                  {"gc_kernel", cfg.model.gc_kernel},
                  {"decoder_channels", cfg.model.decoder_channels},
                  {"aux_classes", cfg.model.aux_classes},
                  {"variant", model::variant_name(cfg.model.variant)},
                  {"use_skip_rnn", cfg.model.use_skip_rnn},
                  {"cell_activation",
                   model::cell_activation_name(cfg.model.cell_activation)}};
  doc["loss"] = {{"lambda_seg", cfg.loss.lambda_seg},
                 {"eps", cfg.loss.eps},
                 {"border_bin_edges", cfg.loss.border_bin_edges},
                 {"beta_per_frame", cfg.loss.beta_per_frame}};
  doc["train"] = {{"lr", cfg.train.lr},
                  {"lr_decay_factor", cfg.train.lr_decay_factor},
                  {"plateau_patience", cfg.train.plateau_patience},
                  {"plateau_smoothing", cfg.train.plateau_smoothing},
                  {"batch_size", cfg.train.batch_size},
                  {"max_steps", cfg.train.max_steps},
                  {"snippet_min", cfg.train.snippet_min},
                  {"snippet_max", cfg.train.snippet_max},
                  {"p_min", cfg.train.p_min},
                  {"decay_steps", cfg.train.decay_steps},
                  {"seed", cfg.train.seed},
                  {"grad_clip_norm", cfg.train.grad_clip_norm},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
  doc["eval"] = {{"tol_fraction", cfg.eval.tol_fraction},
                 {"early_cut", cfg.eval.early_cut},
                 {"late_cut", cfg.eval.late_cut},
                 {"min_len", cfg.eval.min_len},
                 {"occlusion_thresholds", cfg.eval.occlusion_thresholds}};
  return doc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) {
    fail_invalid(strformat("config: cannot open '%s'", path.c_str()));
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail_invalid(strformat("config: '%s' is not valid JSON: %s", path.c_str(),
                           e.what()));
  }
  return parse_run_config(doc);
}

void write_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) {
    fail_runtime(strformat("config: cannot write '%s'", path.c_str()));
  }
  out << run_config_to_json(cfg).dump(2) << "\n";
}

}  // namespace hs2s::cli
