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

#include "hs2s/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hs2s/common.hpp"

namespace hs2s::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) {
    RunConfig cfg;
    cfg.validate();
    return cfg;
  }
  return load_run_config(config_path);
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_run_config(cfg, (fs::path(out_dir) / "config.json").string());
}

bool spec_equal(const std::vector<model::ParamSpecEntry>& a,
                const std::vector<model::ParamSpecEntry>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].shape != b[i].shape) return false;
  }
  return true;
}

// All five architecture variants, in the fixed ablation-table order.
const model::Variant kAllVariants[] = {
    model::Variant::kS2SBaseline, model::Variant::kHs2sRef0Only,
    model::Variant::kHs2sPrevOnly, model::Variant::kHs2sFull,
    model::Variant::kHs2sCosine};

uint8_t quantize(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Blends `color` into `frame_t` (row t of frames) wherever mask is set,
// at 50% alpha, and writes the result as a PNG.
void write_overlay_png(const Tensor& frames, int t, const Tensor& mask2d,
                       const double color[3], const std::string& path) {
  const int h = frames.dim(2), w = frames.dim(3);
  cv::Mat img(h, w, CV_8UC3);
  double area = 0.0;
  for (double v : mask2d.v) area += v;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      cv::Vec3b& bgr = img.at<cv::Vec3b>(y, x);
      const bool on = mask2d.v[static_cast<size_t>(y) * w + x] != 0.0;
      for (int c = 0; c < 3; ++c) {
        double v = frames.at4(t, c, y, x);
        if (on) v = 0.5 * v + 0.5 * color[c];
        bgr[2 - c] = quantize(v);
      }
    }
  if (area == 0.0) {
    // An empty prediction leaves the frame untouched; flag it in text so
    // the rendered strip still shows something happened here.
    cv::putText(img, "no mask", {2, 12}, cv::FONT_HERSHEY_SIMPLEX, 0.35,
                cv::Scalar(0, 0, 255), 1);
  }
  if (!cv::imwrite(path, img)) {
    fail_runtime(strformat("cannot write '%s'", path.c_str()));
  }
}

Tensor mask_row_2d(const Tensor& masks, int t) {
  const int h = masks.dim(2), w = masks.dim(3);
  Tensor out({h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::copy(masks.v.begin() + t * hw, masks.v.begin() + (t + 1) * hw,
            out.v.begin());
  return out;
}

struct VariantResult {
  std::string name;
  bool ok = false;
  double mean_j = 0.0, mean_f = 0.0, mean_jf = 0.0;
  std::string error;
};

// Trains and evaluates one variant into its own subdirectory, recording
// the outcome in <subdir>/summary.json so a parent process can collect it.
void run_variant(model::Variant v, const RunConfig& rc,
                 const std::vector<synth::SequencePair>& dataset,
                 const fs::path& subdir) {
  model::ModelConfig mcfg = rc.model;
  mcfg.variant = v;
  train::Checkpoint ckpt =
      train::train(dataset, mcfg, rc.train, rc.loss, rc.aug, subdir.string());
  eval::MetricsReport rep = evaluate_dataset(mcfg, ckpt.params, dataset, rc.eval);
  eval::write_report(rep, subdir.string());
  json summary = {{"variant", model::variant_name(v)},
                  {"status", "ok"},
                  {"mean_J", rep.mean_j},
                  {"mean_F", rep.mean_f},
                  {"mean_JF", rep.mean_jf}};
  std::ofstream(subdir / "summary.json") << summary.dump(2) << "\n";
}

void write_failed_summary(const fs::path& subdir, model::Variant v,
                          const std::string& message) {
  std::error_code ec;
  fs::create_directories(subdir, ec);
  json summary = {{"variant", model::variant_name(v)},
                  {"status", "failed"},
                  {"error", message}};
  std::ofstream(subdir / "summary.json") << summary.dump(2) << "\n";
}

VariantResult read_summary(const fs::path& subdir, model::Variant v) {
  VariantResult r;
  r.name = model::variant_name(v);
  std::ifstream in(subdir / "summary.json");
  if (!in.good()) {
    r.error = "no summary written";
    return r;
  }
  try {
    json s = json::parse(in);
    r.ok = s.at("status").get<std::string>() == "ok";
    if (r.ok) {
      r.mean_j = s.at("mean_J").get<double>();
      r.mean_f = s.at("mean_F").get<double>();
      r.mean_jf = s.at("mean_JF").get<double>();
    } else {
      r.error = s.value("error", "unknown failure");
    }
  } catch (const json::exception& e) {
    r.ok = false;
    r.error = strformat("unreadable summary: %s", e.what());
  }
  return r;
}

int env_num_workers() {
  const char* env = std::getenv("HS2S_NUM_WORKERS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

}  // namespace

Tensor infer_probs(const model::ModelConfig& cfg, const model::ParamDict& params,
                   const synth::SequencePair& pair) {
  const Tensor& frames = pair.first.frames;
  const Tensor& masks = pair.second.masks;
  const int T = frames.dim(0);
  const int h = frames.dim(2), w = frames.dim(3);

  Tensor first_mask({1, h, w});
  std::copy(masks.v.begin(), masks.v.begin() + static_cast<int64_t>(h) * w,
            first_mask.v.begin());

  std::vector<model::MaskSource> feed(static_cast<size_t>(T - 1),
                                      model::MaskSource::kPredicted);
  feed[0] = model::MaskSource::kGroundTruth;

  ad::Tape tape;
  model::ParamVars pv = model::params_on_tape(tape, params, /*requires_grad=*/false);
  model::SequenceOutput out =
      model::forward_sequence(tape, frames, first_mask, pv, cfg, feed, nullptr);

  Tensor probs({T - 1, 1, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < T - 1; ++i) {
    const Tensor& p = tape.val(out.fg_probs[i]);
    std::copy(p.v.begin(), p.v.end(), probs.v.begin() + i * hw);
  }
  return probs;
}

eval::MetricsReport evaluate_dataset(const model::ModelConfig& cfg,
                                     const model::ParamDict& params,
                                     const std::vector<synth::SequencePair>& dataset,
                                     const eval::EvalParams& params_eval) {
  std::vector<eval::SequenceReport> reports;
  std::vector<synth::MaskSequence> gts;
  reports.reserve(dataset.size());
  gts.reserve(dataset.size());
  for (const synth::SequencePair& pair : dataset) {
    const Tensor probs = infer_probs(cfg, params, pair);
    const Tensor& masks = pair.second.masks;
    const int T = masks.dim(0);
    const int64_t hw = static_cast<int64_t>(masks.dim(2)) * masks.dim(3);
    Tensor gt_tail({T - 1, 1, masks.dim(2), masks.dim(3)});
    std::copy(masks.v.begin() + hw, masks.v.end(), gt_tail.v.begin());
    eval::SequenceReport rep;
    rep.seq_id = pair.first.seq_id;
    rep.length = T;
    rep.frames = eval::evaluate_sequence(probs, gt_tail, params_eval.tol_fraction);
    reports.push_back(std::move(rep));
    gts.push_back(pair.second);
  }
  return eval::assemble_report(reports, gts, params_eval);
}

int cmd_gen_data(const GenDataArgs& args) try {
  RunConfig rc = load_or_default(args.config_path);
  if (args.n_sequences) rc.data.n_sequences = *args.n_sequences;
  if (args.seed) rc.data.base.seed = *args.seed;
  rc.data.validate();

  const fs::path out(args.out_dir);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!args.force) {
      std::fprintf(stderr,
                   "gen-data: '%s' exists and is not empty; pass --force to replace it\n",
                   args.out_dir.c_str());
      return 1;
    }
    fs::remove_all(out);
  }

  std::vector<synth::SequencePair> pairs;
  pairs.reserve(static_cast<size_t>(rc.data.n_sequences));
  for (int i = 0; i < rc.data.n_sequences; ++i) {
    pairs.push_back(synth::generate_sequence(rc.data.sequence_config(i)));
  }
  const std::vector<synth::ManifestEntry> manifest =
      synth::write_dataset(pairs, args.out_dir);
  echo_config(rc, args.out_dir);

  std::printf("gen-data: wrote %zu sequences (t=%d, %dx%d) to %s\n",
              manifest.size(), rc.data.base.t, rc.data.base.h, rc.data.base.w,
              args.out_dir.c_str());
  for (const synth::ManifestEntry& e : manifest) {
    std::printf("  %s length=%d\n", e.id.c_str(), e.length);
  }
  return 0;
} catch (const std::exception& e) {
  std::fprintf(stderr, "gen-data: %s\n", e.what());
  return 1;
}

int cmd_train(const TrainArgs& args) try {
  RunConfig rc = load_or_default(args.config_path);
  if (args.seed) rc.train.seed = *args.seed;

  const std::vector<synth::SequencePair> dataset = synth::load_dataset(args.data_dir);

  train::Checkpoint resume;
  const train::Checkpoint* resume_ptr = nullptr;
  if (!args.resume_path.empty()) {
    resume = train::load_checkpoint(args.resume_path);
    resume_ptr = &resume;
  }

  echo_config(rc, args.out_dir);
  train::Checkpoint ckpt;
  try {
    ckpt = train::train(dataset, rc.model, rc.train, rc.loss, rc.aug,
                        args.out_dir, resume_ptr);
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "train: aborted: %s\n", e.what());
    std::fprintf(stderr, "train: last-good checkpoint retained in %s\n",
                 args.out_dir.c_str());
    return 1;
  }

  std::printf("train: finished at step %lld (loss %.6f, lr %.3g); "
              "final checkpoint %s/ckpt_final.bin\n",
              static_cast<long long>(ckpt.schedule.step),
              ckpt.last_metrics.loss_total, ckpt.plateau.lr,
              args.out_dir.c_str());
  return 0;
} catch (const std::exception& e) {
  std::fprintf(stderr, "train: %s\n", e.what());
  return 1;
}

int cmd_eval(const EvalArgs& args) try {
  RunConfig rc = load_or_default(args.config_path);
  train::Checkpoint ckpt = train::load_checkpoint(args.checkpoint);

  if (!args.variant_override.empty()) {
    const model::Variant v = model::variant_from_name(args.variant_override);
    model::ModelConfig alt = ckpt.config;
    alt.variant = v;
    if (!spec_equal(model::param_spec(alt), model::param_spec(ckpt.config))) {
      std::fprintf(stderr,
                   "eval: cannot evaluate a %s checkpoint as %s: "
                   "the parameter sets differ\n",
                   model::variant_name(ckpt.config.variant),
                   model::variant_name(v));
      return 1;
    }
    ckpt.config = alt;
  }

  const std::vector<synth::SequencePair> dataset = synth::load_dataset(args.data_dir);
  const eval::MetricsReport rep =
      evaluate_dataset(ckpt.config, ckpt.params, dataset, rc.eval);
  eval::write_report(rep, args.out_dir);
  rc.model = ckpt.config;
  echo_config(rc, args.out_dir);

  std::printf("eval: %zu sequences, %lld frames: J=%.4f F=%.4f (J+F)/2=%.4f\n",
              rep.sequences.size(), static_cast<long long>(rep.n_frames),
              rep.mean_j, rep.mean_f,
              rep.mean_jf);
  return 0;
} catch (const std::exception& e) {
  std::fprintf(stderr, "eval: %s\n", e.what());
  return 1;
}

int cmd_overlay(const OverlayArgs& args) try {
  train::Checkpoint ckpt = train::load_checkpoint(args.checkpoint);
  const synth::SequencePair pair = synth::load_sequence_dir(args.sequence_dir);
  const int T = pair.first.t();

  const Tensor probs = infer_probs(ckpt.config, ckpt.params, pair);

  fs::create_directories(args.out_dir);
  constexpr double kGreen[3] = {0.0, 1.0, 0.0};  // given first-frame mask
  constexpr double kRed[3] = {1.0, 0.0, 0.0};    // predictions
  const int h = pair.first.frames.dim(2), w = pair.first.frames.dim(3);

  write_overlay_png(pair.first.frames, 0, mask_row_2d(pair.second.masks, 0),
                    kGreen, (fs::path(args.out_dir) / "00000.png").string());
  for (int t = 1; t < T; ++t) {
    Tensor mask({h, w});
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < hw; ++i) {
      mask.v[i] = probs.v[(t - 1) * hw + i] >= 0.5 ? 1.0 : 0.0;
    }
    write_overlay_png(pair.first.frames, t, mask, kRed,
                      (fs::path(args.out_dir) / strformat("%05d.png", t)).string());
  }

  std::printf("overlay: wrote %d PNGs for '%s' to %s\n", T,
              pair.first.seq_id.c_str(), args.out_dir.c_str());
  return 0;
} catch (const std::exception& e) {
  std::fprintf(stderr, "overlay: %s\n", e.what());
  return 1;
}

int cmd_ablate(const AblateArgs& args) try {
  RunConfig rc = load_or_default(args.config_path);
  const std::vector<synth::SequencePair> dataset = synth::load_dataset(args.data_dir);
  const int workers =
      std::min<int>(args.num_workers > 0 ? args.num_workers : env_num_workers(),
                    static_cast<int>(std::size(kAllVariants)));
  echo_config(rc, args.out_dir);

  if (workers <= 1) {
    for (model::Variant v : kAllVariants) {
      const fs::path sub = fs::path(args.out_dir) / model::variant_name(v);
      try {
        run_variant(v, rc, dataset, sub);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "ablate: variant %s failed: %s\n",
                     model::variant_name(v), e.what());
        write_failed_summary(sub, v, e.what());
      }
    }
  } else {
    // One child process per variant, at most `workers` in flight. Output
    // directories are disjoint, so children never contend.
    std::vector<pid_t> running;
    auto reap_one = [&]() {
      int status = 0;
      const pid_t done = ::wait(&status);
      if (done > 0) {
        running.erase(std::remove(running.begin(), running.end(), done),
                      running.end());
      }
    };
    for (model::Variant v : kAllVariants) {
      while (static_cast<int>(running.size()) >= workers) reap_one();
      const fs::path sub = fs::path(args.out_dir) / model::variant_name(v);
      const pid_t pid = ::fork();
      if (pid < 0) fail_runtime("ablate: fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          run_variant(v, rc, dataset, sub);
        } catch (const std::exception& e) {
          write_failed_summary(sub, v, e.what());
          code = 1;
        }
        ::_exit(code);
      }
      running.push_back(pid);
    }
    while (!running.empty()) reap_one();
  }

  std::ofstream csv(fs::path(args.out_dir) / "ablation.csv", std::ios::trunc);
  csv << "variant,J,F,JF,status\n";
  bool all_ok = true;
  for (model::Variant v : kAllVariants) {
    const VariantResult r =
        read_summary(fs::path(args.out_dir) / model::variant_name(v), v);
    if (r.ok) {
      csv << r.name << "," << strformat("%.6f", r.mean_j) << ","
          << strformat("%.6f", r.mean_f) << "," << strformat("%.6f", r.mean_jf)
          << ",ok\n";
      std::printf("ablate: %-16s J=%.4f F=%.4f (J+F)/2=%.4f\n", r.name.c_str(),
                  r.mean_j, r.mean_f, r.mean_jf);
    } else {
      csv << r.name << ",,,,failed\n";
      std::printf("ablate: %-16s FAILED (%s)\n", r.name.c_str(), r.error.c_str());
      all_ok = false;
    }
  }
  return all_ok ? 0 : 1;
} catch (const std::exception& e) {
  std::fprintf(stderr, "ablate: %s\n", e.what());
  return 1;
}

}  // namespace hs2s::cli
