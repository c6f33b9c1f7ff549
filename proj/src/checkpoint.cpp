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
//
// Checkpoint container: an 8-byte magic, a u32 format version, a u64
// length-prefixed JSON header (config, counters, tensor directory), then
// the raw little-endian doubles of every tensor in directory order.
// Scalars ride in the JSON header; nlohmann serializes doubles with
// shortest-round-trip precision, so they reload bit-exactly.

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hs2s/training.hpp"

using json = nlohmann::json;

namespace hs2s::train {

namespace {

constexpr char kMagic[8] = {'H', 'S', '2', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

json config_to_json(const model::ModelConfig& c) {
  return json{{"in_h", c.in_h},
              {"in_w", c.in_w},
              {"base_channels", c.base_channels},
              {"bottleneck_channels", c.bottleneck_channels},
              {"rnn_kernel", c.rnn_kernel},
              {"gc_kernel", c.gc_kernel},
              {"decoder_channels", c.decoder_channels},
              {"aux_classes", c.aux_classes},
              {"variant", model::variant_name(c.variant)},
              {"use_skip_rnn", c.use_skip_rnn},
              {"cell_activation", model::cell_activation_name(c.cell_activation)}};
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  c.in_h = j.at("in_h").get<int>();
  c.in_w = j.at("in_w").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.bottleneck_channels = j.at("bottleneck_channels").get<int>();
  c.rnn_kernel = j.at("rnn_kernel").get<int>();
  c.gc_kernel = j.at("gc_kernel").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
  c.aux_classes = j.at("aux_classes").get<int>();
  c.variant = model::variant_from_name(j.at("variant").get<std::string>());
  c.use_skip_rnn = j.at("use_skip_rnn").get<bool>();
  c.cell_activation =
      model::cell_activation_from_name(j.at("cell_activation").get<std::string>());
  return c;
}

[[noreturn]] void fail_corrupt(const std::string& path, const char* why) {
  fail_runtime(strformat("corrupt checkpoint '%s': %s", path.c_str(), why));
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["model_config"] = config_to_json(ckpt.config);
  header["schedule"] = {{"step", ckpt.schedule.step}, {"p_gt", ckpt.schedule.p_gt}};
  header["adam_t"] = ckpt.opt.t;
  header["plateau"] = {{"lr", ckpt.plateau.lr},
                       {"smoothed", ckpt.plateau.smoothed},
                       {"best", ckpt.plateau.best},
                       {"initialized", ckpt.plateau.initialized},
                       {"wait", ckpt.plateau.wait}};
  header["last_metrics"] = {{"step", ckpt.last_metrics.step},
                            {"loss_total", ckpt.last_metrics.loss_total},
                            {"loss_seg", ckpt.last_metrics.loss_seg},
                            {"loss_aux", ckpt.last_metrics.loss_aux},
                            {"p_gt", ckpt.last_metrics.p_gt},
                            {"lr", ckpt.last_metrics.lr}};

  // Tensor directory: parameters first, then optimizer moments, each with
  // its payload described so the blob is self-delimiting.
  json dir = json::array();
  auto add_group = [&dir](const char* role, const std::map<std::string, Tensor>& group) {
    for (const auto& [name, t] : group) {
      dir.push_back({{"role", role}, {"name", name}, {"shape", t.shape}});
    }
  };
  add_group("param", ckpt.params);
  add_group("adam_m", ckpt.opt.m);
  add_group("adam_v", ckpt.opt.v);
  header["tensors"] = dir;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_runtime(strformat("cannot write checkpoint '%s'", path.c_str()));
  out.write(kMagic, sizeof(kMagic));
  const uint32_t ver = kVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(hlen));

  auto write_group = [&out](const std::map<std::string, Tensor>& group) {
    for (const auto& [name, t] : group) {
      out.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
  };
  write_group(ckpt.params);
  write_group(ckpt.opt.m);
  write_group(ckpt.opt.v);
  if (!out.good()) fail_runtime(strformat("error writing checkpoint '%s'", path.c_str()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime(strformat("cannot open checkpoint '%s'", path.c_str()));

  char magic[8];
  if (!in.read(magic, sizeof(magic))) fail_corrupt(path, "file too short for header");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) fail_corrupt(path, "bad magic");
  uint32_t ver = 0;
  if (!in.read(reinterpret_cast<char*>(&ver), sizeof(ver))) {
    fail_corrupt(path, "file too short for version");
  }
  if (ver != kVersion) {
    fail_runtime(strformat("checkpoint '%s' has unsupported version %u (expected %u)",
                           path.c_str(), ver, kVersion));
  }
  uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen))) {
    fail_corrupt(path, "file too short for header length");
  }
  std::string header_str(hlen, '\0');
  if (!in.read(header_str.data(), static_cast<std::streamsize>(hlen))) {
    fail_corrupt(path, "truncated header");
  }
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception&) {
    fail_corrupt(path, "unparsable header");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("model_config"));
    ckpt.schedule.step = header.at("schedule").at("step").get<int64_t>();
    ckpt.schedule.p_gt = header.at("schedule").at("p_gt").get<double>();
    ckpt.opt.t = header.at("adam_t").get<int64_t>();
    const json& pl = header.at("plateau");
    ckpt.plateau.lr = pl.at("lr").get<double>();
    ckpt.plateau.smoothed = pl.at("smoothed").get<double>();
    ckpt.plateau.best = pl.at("best").get<double>();
    ckpt.plateau.initialized = pl.at("initialized").get<bool>();
    ckpt.plateau.wait = pl.at("wait").get<int64_t>();
    const json& lm = header.at("last_metrics");
    ckpt.last_metrics.step = lm.at("step").get<int64_t>();
    ckpt.last_metrics.loss_total = lm.at("loss_total").get<double>();
    ckpt.last_metrics.loss_seg = lm.at("loss_seg").get<double>();
    ckpt.last_metrics.loss_aux = lm.at("loss_aux").get<double>();
    ckpt.last_metrics.p_gt = lm.at("p_gt").get<double>();
    ckpt.last_metrics.lr = lm.at("lr").get<double>();
  } catch (const json::exception&) {
    fail_corrupt(path, "header is missing required fields");
  }
  ckpt.config.validate();

  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    fail_corrupt(path, "header lacks a tensor directory");
  }
  for (const json& e : header["tensors"]) {
    std::string role, name;
    std::vector<int> shape;
    try {
      role = e.at("role").get<std::string>();
      name = e.at("name").get<std::string>();
      shape = e.at("shape").get<std::vector<int>>();
    } catch (const json::exception&) {
      fail_corrupt(path, "malformed tensor directory entry");
    }
    int64_t numel = 1;
    for (int d : shape) {
      if (d < 1 || numel > (int64_t{1} << 31)) fail_corrupt(path, "implausible tensor shape");
      numel *= d;
    }
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.v.data()),
                 static_cast<std::streamsize>(t.v.size() * sizeof(double)))) {
      fail_corrupt(path, "truncated tensor payload");
    }
    std::map<std::string, Tensor>* dest = nullptr;
    if (role == "param") dest = &ckpt.params;
    else if (role == "adam_m") dest = &ckpt.opt.m;
    else if (role == "adam_v") dest = &ckpt.opt.v;
    else fail_corrupt(path, "unknown tensor role");
    if (!dest->emplace(name, std::move(t)).second) {
      fail_corrupt(path, "duplicate tensor name");
    }
  }
  // Nothing may trail the declared payload.
  char extra;
  if (in.read(&extra, 1)) fail_corrupt(path, "trailing bytes after payload");

  // Shape validation against the stored config, naming the offender.
  const std::vector<model::ParamSpecEntry> spec = model::param_spec(ckpt.config);
  if (spec.size() != ckpt.params.size()) {
    fail_runtime(strformat("checkpoint '%s': %zu parameter tensors, config expects %zu",
                           path.c_str(), ckpt.params.size(), spec.size()));
  }
  for (const model::ParamSpecEntry& e : spec) {
    const auto it = ckpt.params.find(e.name);
    if (it == ckpt.params.end()) {
      fail_runtime(strformat("checkpoint '%s': missing parameter '%s'", path.c_str(),
                             e.name.c_str()));
    }
    if (it->second.shape != e.shape) {
      fail_runtime(strformat("checkpoint '%s': shape mismatch for tensor '%s'",
                             path.c_str(), e.name.c_str()));
    }
  }
  for (const auto* moments : {&ckpt.opt.m, &ckpt.opt.v}) {
    for (const auto& [name, t] : *moments) {
      const auto it = ckpt.params.find(name);
      if (it == ckpt.params.end() || it->second.shape != t.shape) {
        fail_runtime(strformat("checkpoint '%s': shape mismatch for tensor '%s'",
                               path.c_str(), name.c_str()));
      }
    }
  }
  return ckpt;
}

}  // namespace hs2s::train
