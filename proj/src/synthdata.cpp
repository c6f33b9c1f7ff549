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

#include "hs2s/synthdata.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hs2s/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hs2s::synth {

void validate_pair(const SequencePair& pair) {
  const Tensor& f = pair.first.frames;
  const Tensor& m = pair.second.masks;
  if (f.ndim() != 4 || f.dim(1) != 3) fail_invalid("sequence frames must be [T,3,H,W]");
  if (m.ndim() != 4 || m.dim(1) != 1) fail_invalid("sequence masks must be [T,1,H,W]");
  if (f.dim(0) != m.dim(0) || f.dim(2) != m.dim(2) || f.dim(3) != m.dim(3)) {
    fail_invalid(strformat("frames %s and masks %s disagree",
                           f.shape_str().c_str(), m.shape_str().c_str()));
  }
  if (f.dim(0) < 2) fail_invalid("sequence must have at least 2 frames");
  if (f.dim(2) % 32 != 0 || f.dim(3) % 32 != 0 || f.dim(2) < 32 || f.dim(3) < 32) {
    fail_invalid(strformat("sequence size %dx%d must be a positive multiple of 32",
                           f.dim(2), f.dim(3)));
  }
  for (double v : f.v) {
    if (!(v >= 0.0 && v <= 1.0)) fail_invalid("frame values must lie in [0,1]");
  }
  for (double v : m.v) {
    if (v != 0.0 && v != 1.0) fail_invalid("mask values must be exactly 0/1");
  }
  double area0 = 0.0;
  const int64_t hw = static_cast<int64_t>(m.dim(2)) * m.dim(3);
  for (int64_t j = 0; j < hw; ++j) area0 += m.v[j];
  if (area0 <= 0.0) fail_invalid("first-frame mask must have nonzero area");
}

const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kTriangle: return "triangle";
  }
  fail_invalid("shape_kind_name: unknown kind");
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "square") return ShapeKind::kSquare;
  if (name == "circle") return ShapeKind::kCircle;
  if (name == "triangle") return ShapeKind::kTriangle;
  fail_invalid(strformat("unknown shape kind '%s'", name.c_str()));
}

void SynthConfig::validate() const {
  if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0) {
    fail_invalid(strformat("SynthConfig: size %dx%d must be a positive multiple of 32", h, w));
  }
  if (t < 2) fail_invalid("SynthConfig: t must be >= 2");
  if (n_distractors < 0) fail_invalid("SynthConfig: n_distractors must be >= 0");
  if (occlusion_interval.has_value()) {
    const auto [start, end] = *occlusion_interval;
    if (start < 1 || start >= end || end >= t) {
      fail_invalid(strformat(
          "SynthConfig: occlusion_interval (%d,%d) must satisfy 1 <= start < end < t=%d",
          start, end, t));
    }
  }
  if (!(motion_speed > 0.0)) fail_invalid("SynthConfig: motion_speed must be positive");
}

void AugConfig::validate() const {
  if (hflip_prob < 0.0 || hflip_prob > 1.0) {
    fail_invalid("AugConfig: hflip_prob must lie in [0,1]");
  }
  if (max_rotation < 0.0) fail_invalid("AugConfig: max_rotation must be >= 0");
  if (max_translation < 0.0 || max_translation > 0.5) {
    fail_invalid("AugConfig: max_translation must lie in [0,0.5]");
  }
  if (max_scale_delta < 0.0 || max_scale_delta > 0.5) {
    fail_invalid("AugConfig: max_scale_delta must lie in [0,0.5]");
  }
}

namespace {

struct Body {
  double cx, cy;     // centre, pixels
  double vx, vy;     // velocity, pixels/frame
  double size;       // half-extent, pixels
  double rgb[3];
};

bool inside_shape(ShapeKind kind, const Body& b, int y, int x) {
  const double dx = x - b.cx, dy = y - b.cy;
  switch (kind) {
    case ShapeKind::kSquare:
      return std::fabs(dx) <= b.size && std::fabs(dy) <= b.size;
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= b.size * b.size;
    case ShapeKind::kTriangle: {
      // Isoceles triangle, apex up: A=(cx,cy-s), B=(cx-s,cy+s), C=(cx+s,cy+s).
      if (dy < -b.size || dy > b.size) return false;
      const double half_width = (dy + b.size) * 0.5;
      return std::fabs(dx) <= half_width;
    }
  }
  return false;
}

void draw_body(Tensor& frame, int ti, ShapeKind kind, const Body& b, int h, int w) {
  const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.size)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(b.cy + b.size)));
  const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.size)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(b.cx + b.size)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!inside_shape(kind, b, y, x)) continue;
      for (int c = 0; c < 3; ++c) frame.at4(ti, c, y, x) = b.rgb[c];
    }
}

// Advance with wall bouncing; centre stays within [margin, limit-margin].
void step_body(Body& b, int h, int w) {
  b.cx += b.vx;
  b.cy += b.vy;
  auto bounce = [](double& pos, double& vel, double lo, double hi) {
    // A couple of reflections suffice for any sane speed.
    for (int i = 0; i < 8 && (pos < lo || pos > hi); ++i) {
      if (pos < lo) {
        pos = 2 * lo - pos;
        vel = -vel;
      } else if (pos > hi) {
        pos = 2 * hi - pos;
        vel = -vel;
      }
    }
    pos = std::clamp(pos, lo, hi);
  };
  bounce(b.cx, b.vx, b.size, w - 1 - b.size);
  bounce(b.cy, b.vy, b.size, h - 1 - b.size);
}

Body random_body(Rng& rng, int h, int w, double speed) {
  Body b;
  const double min_dim = std::min(h, w);
  b.size = rng.uniform(0.10, 0.16) * min_dim;
  b.cx = rng.uniform(b.size, w - 1 - b.size);
  b.cy = rng.uniform(b.size, h - 1 - b.size);
  const double ang = rng.uniform(0.0, 2.0 * M_PI);
  b.vx = speed * std::cos(ang);
  b.vy = speed * std::sin(ang);
  return b;
}

}  // namespace

SequencePair generate_sequence(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int h = cfg.h, w = cfg.w, T = cfg.t;

  // Dark two-colour vertical gradient background.
  double bg_top[3], bg_bot[3];
  for (int c = 0; c < 3; ++c) bg_top[c] = rng.uniform(0.05, 0.35);
  for (int c = 0; c < 3; ++c) bg_bot[c] = rng.uniform(0.05, 0.35);

  Body target = random_body(rng, h, w, cfg.motion_speed);
  for (int c = 0; c < 3; ++c) target.rgb[c] = rng.uniform(0.55, 0.95);

  std::vector<Body> distractors;
  for (int i = 0; i < cfg.n_distractors; ++i) {
    Body d = random_body(rng, h, w, cfg.motion_speed);
    // Same colour family as the target, perturbed enough to tell apart.
    for (int c = 0; c < 3; ++c) {
      d.rgb[c] = std::clamp(target.rgb[c] + rng.uniform(-0.15, 0.15), 0.4, 1.0);
    }
    distractors.push_back(d);
  }

  SequencePair pair;
  pair.first.frames = Tensor({T, 3, h, w});
  pair.first.seq_id = strformat("seq_%08llx", static_cast<unsigned long long>(cfg.seed));
  pair.second.masks = Tensor({T, 1, h, w});
  pair.second.object_id = pair.first.seq_id + "_obj0";

  Tensor& frames = pair.first.frames;
  Tensor& masks = pair.second.masks;
  for (int t = 0; t < T; ++t) {
    for (int y = 0; y < h; ++y) {
      const double a = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - a) * bg_top[c] + a * bg_bot[c];
        for (int x = 0; x < w; ++x) frames.at4(t, c, y, x) = v;
      }
    }
    for (const Body& d : distractors) draw_body(frames, t, cfg.shape_kind, d, h, w);

    const bool occluded = cfg.occlusion_interval.has_value() &&
                          t >= cfg.occlusion_interval->first &&
                          t <= cfg.occlusion_interval->second;
    if (!occluded) {
      draw_body(frames, t, cfg.shape_kind, target, h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (inside_shape(cfg.shape_kind, target, y, x)) masks.at4(t, 0, y, x) = 1.0;
        }
    }

    if (t + 1 < T) {
      step_body(target, h, w);
      for (Body& d : distractors) step_body(d, h, w);
    }
  }
  validate_pair(pair);
  return pair;
}

SequencePair augment(const SequencePair& pair, const AugConfig& aug, uint64_t seed) {
  aug.validate();
  const Tensor& f = pair.first.frames;
  const Tensor& m = pair.second.masks;
  if (f.ndim() != 4 || m.ndim() != 4 || f.dim(0) != m.dim(0) ||
      f.dim(2) != m.dim(2) || f.dim(3) != m.dim(3)) {
    fail_invalid("augment: frames and masks must be paired [T,3,H,W]/[T,1,H,W]");
  }
  const int T = f.dim(0), h = f.dim(2), w = f.dim(3);

  Rng rng(seed);
  const bool flip = rng.bernoulli(aug.hflip_prob);
  const double theta = rng.uniform(-aug.max_rotation, aug.max_rotation) * M_PI / 180.0;
  const double scale = 1.0 + rng.uniform(-aug.max_scale_delta, aug.max_scale_delta);
  const double tx = rng.uniform(-aug.max_translation, aug.max_translation) * w;
  const double ty = rng.uniform(-aug.max_translation, aug.max_translation) * h;

  if (!flip && theta == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0) {
    return pair;  // exact identity
  }

  // Map each output pixel back to its source location: inverse rotation
  // and scale about the image centre, then inverse translation, with the
  // horizontal flip folded in first.
  const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
  const double cosv = std::cos(theta), sinv = std::sin(theta);
  const double inv_s = 1.0 / scale;

  SequencePair out = pair;
  Tensor& of = out.first.frames;
  Tensor& om = out.second.masks;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double ox = x - cx - tx;
      double oy = y - cy - ty;
      // Inverse of rotate-then-scale: scale down, rotate by -theta.
      double sx = inv_s * (cosv * ox + sinv * oy);
      double sy = inv_s * (-sinv * ox + cosv * oy);
      if (flip) sx = -sx;
      sx += cx;
      sy += cy;

      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      // Bilinear sample with zero fill outside the image.
      auto sample = [&](const Tensor& src, int t, int c) {
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
            acc += wgt * src.at4(t, c, yy, xx);
          }
        return acc;
      };
      for (int t = 0; t < T; ++t) {
        for (int c = 0; c < 3; ++c) of.at4(t, c, y, x) = sample(f, t, c);
        om.at4(t, 0, y, x) = sample(m, t, 0) >= 0.5 ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

namespace {

void write_png(const std::string& path, const cv::Mat& img) {
  if (!cv::imwrite(path, img)) {
    fail_runtime(strformat("failed to write image '%s'", path.c_str()));
  }
}

std::string frame_name(int idx) { return strformat("%05d.png", idx); }

}  // namespace

std::vector<ManifestEntry> write_dataset(const std::vector<SequencePair>& data,
                                         const std::string& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail_runtime(strformat("cannot create dataset root '%s': %s",
                                 root.c_str(), ec.message().c_str()));

  std::vector<ManifestEntry> manifest;
  for (const SequencePair& pair : data) {
    validate_pair(pair);
    const Tensor& f = pair.first.frames;
    const Tensor& m = pair.second.masks;
    const int T = f.dim(0), h = f.dim(2), w = f.dim(3);
    const std::string& id = pair.first.seq_id;
    const fs::path seq_dir = fs::path(root) / "sequences" / id;
    for (const char* sub : {"frames", "masks"}) {
      fs::create_directories(seq_dir / sub, ec);
      if (ec) fail_runtime(strformat("cannot create '%s': %s",
                                     (seq_dir / sub).string().c_str(),
                                     ec.message().c_str()));
    }

    for (int t = 0; t < T; ++t) {
      cv::Mat rgb(h, w, CV_8UC3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          // OpenCV stores BGR; the file ends up conventional RGB.
          auto q = [&](int c) {
            return static_cast<uint8_t>(std::lround(f.at4(t, c, y, x) * 255.0));
          };
          rgb.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
        }
      write_png((seq_dir / "frames" / frame_name(t)).string(), rgb);

      cv::Mat gray(h, w, CV_8UC1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          gray.at<uint8_t>(y, x) = m.at4(t, 0, y, x) == 1.0 ? 255 : 0;
        }
      write_png((seq_dir / "masks" / frame_name(t)).string(), gray);
    }
    manifest.push_back({id, T});
  }

  json j;
  j["sequences"] = json::array();
  for (const ManifestEntry& e : manifest) {
    j["sequences"].push_back({{"id", e.id}, {"length", e.length}});
  }
  const std::string mpath = (fs::path(root) / "manifest.json").string();
  std::ofstream out(mpath);
  if (!out) fail_runtime(strformat("cannot write manifest '%s'", mpath.c_str()));
  out << j.dump(2) << "\n";
  if (!out.good()) fail_runtime(strformat("error writing manifest '%s'", mpath.c_str()));
  return manifest;
}

std::vector<SequencePair> load_dataset(const std::string& root) {
  const fs::path mpath = fs::path(root) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) fail_runtime(strformat("missing manifest '%s'", mpath.string().c_str()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail_runtime(strformat("corrupt manifest '%s': %s", mpath.string().c_str(), e.what()));
  }
  if (!j.contains("sequences") || !j["sequences"].is_array()) {
    fail_runtime(strformat("manifest '%s' lacks a sequences array", mpath.string().c_str()));
  }

  std::vector<SequencePair> out;
  for (const json& e : j["sequences"]) {
    const std::string id = e.at("id").get<std::string>();
    const int T = e.at("length").get<int>();
    if (T < 2) fail_runtime(strformat("sequence '%s' has invalid length %d", id.c_str(), T));
    const fs::path seq_dir = fs::path(root) / "sequences" / id;

    SequencePair pair;
    pair.first.seq_id = id;
    pair.second.object_id = id + "_obj0";
    int h = 0, w = 0;
    for (int t = 0; t < T; ++t) {
      const std::string fpath = (seq_dir / "frames" / frame_name(t)).string();
      cv::Mat img = cv::imread(fpath, cv::IMREAD_COLOR);
      if (img.empty()) fail_runtime(strformat("missing file '%s'", fpath.c_str()));
      const std::string mpath2 = (seq_dir / "masks" / frame_name(t)).string();
      cv::Mat msk = cv::imread(mpath2, cv::IMREAD_GRAYSCALE);
      if (msk.empty()) fail_runtime(strformat("missing file '%s'", mpath2.c_str()));

      if (t == 0) {
        h = img.rows;
        w = img.cols;
        if (h % 32 != 0 || w % 32 != 0 || h < 32 || w < 32) {
          fail_runtime(strformat("sequence '%s': size %dx%d is not a multiple of 32",
                                 id.c_str(), h, w));
        }
        pair.first.frames = Tensor({T, 3, h, w});
        pair.second.masks = Tensor({T, 1, h, w});
      }
      if (img.rows != h || img.cols != w || msk.rows != h || msk.cols != w) {
        fail_runtime(strformat("sequence '%s': frame %d size differs from frame 0",
                               id.c_str(), t));
      }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
          pair.first.frames.at4(t, 0, y, x) = bgr[2] / 255.0;
          pair.first.frames.at4(t, 1, y, x) = bgr[1] / 255.0;
          pair.first.frames.at4(t, 2, y, x) = bgr[0] / 255.0;
          pair.second.masks.at4(t, 0, y, x) = msk.at<uint8_t>(y, x) >= 128 ? 1.0 : 0.0;
        }
    }

    // Every manifest-listed file loaded; extra files beyond the declared
    // length are a count mismatch (absent ones already failed above).
    for (const char* sub : {"frames", "masks"}) {
      size_t n = 0;
      std::error_code ec;
      for (auto it = fs::directory_iterator(seq_dir / sub, ec);
           !ec && it != fs::directory_iterator(); ++it) {
        if (it->path().extension() == ".png") ++n;
      }
      if (!ec && n != static_cast<size_t>(T)) {
        fail_runtime(strformat("sequence '%s': %s count %zu does not match length %d",
                               id.c_str(), sub, n, T));
      }
    }
    validate_pair(pair);
    out.push_back(std::move(pair));
  }
  return out;
}

SequencePair load_sequence_dir(const std::string& dir) {
  fs::path d = fs::path(dir).lexically_normal();
  if (!d.has_filename()) d = d.parent_path();

  size_t n_frames = 0;
  std::error_code ec;
  for (auto it = fs::directory_iterator(d / "frames", ec);
       !ec && it != fs::directory_iterator(); ++it) {
    if (it->path().extension() == ".png") ++n_frames;
  }
  if (ec) {
    fail_runtime(strformat("missing sequence directory '%s'",
                           (d / "frames").string().c_str()));
  }
  if (n_frames < 2) {
    fail_runtime(strformat("sequence directory '%s' holds %zu frame PNGs; need >= 2",
                           d.string().c_str(), n_frames));
  }
  const int T = static_cast<int>(n_frames);

  SequencePair pair;
  pair.first.seq_id = d.filename().string();
  pair.second.object_id = pair.first.seq_id + "_obj0";
  int h = 0, w = 0;
  for (int t = 0; t < T; ++t) {
    const std::string fpath = (d / "frames" / frame_name(t)).string();
    cv::Mat img = cv::imread(fpath, cv::IMREAD_COLOR);
    if (img.empty()) fail_runtime(strformat("missing file '%s'", fpath.c_str()));
    if (t == 0) {
      h = img.rows;
      w = img.cols;
      pair.first.frames = Tensor({T, 3, h, w});
      pair.second.masks = Tensor({T, 1, h, w});
    }
    if (img.rows != h || img.cols != w) {
      fail_runtime(strformat("sequence '%s': frame %d size differs from frame 0",
                             pair.first.seq_id.c_str(), t));
    }
    const std::string mpath = (d / "masks" / frame_name(t)).string();
    cv::Mat msk = cv::imread(mpath, cv::IMREAD_GRAYSCALE);
    // Only the first-frame mask is mandatory: later ones are unknown at
    // inference time and read as empty when the file is absent.
    if (msk.empty() && t == 0) {
      fail_runtime(strformat("missing file '%s'", mpath.c_str()));
    }
    if (!msk.empty() && (msk.rows != h || msk.cols != w)) {
      fail_runtime(strformat("sequence '%s': mask %d size differs from frame 0",
                             pair.first.seq_id.c_str(), t));
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
        pair.first.frames.at4(t, 0, y, x) = bgr[2] / 255.0;
        pair.first.frames.at4(t, 1, y, x) = bgr[1] / 255.0;
        pair.first.frames.at4(t, 2, y, x) = bgr[0] / 255.0;
        if (!msk.empty()) {
          pair.second.masks.at4(t, 0, y, x) = msk.at<uint8_t>(y, x) >= 128 ? 1.0 : 0.0;
        }
      }
  }
  validate_pair(pair);
  return pair;
}

SequencePair sample_snippet(const SequencePair& pair, int min_len, int max_len,
                            uint64_t seed) {
  const int T = pair.first.t();
  if (min_len < 2 || min_len > max_len) {
    fail_invalid(strformat("sample_snippet: bad length range [%d,%d]", min_len, max_len));
  }
  if (T < min_len) {
    fail_invalid(strformat("sample_snippet: sequence length %d below minimum %d", T, min_len));
  }
  if (max_len > T) {
    fail_invalid(strformat("sample_snippet: max_len %d exceeds sequence length %d",
                           max_len, T));
  }
  const Tensor& m = pair.second.masks;
  const int64_t hw = static_cast<int64_t>(m.dim(2)) * m.dim(3);
  auto area = [&](int t) {
    double a = 0.0;
    for (int64_t j = 0; j < hw; ++j) a += m.v[t * hw + j];
    return a;
  };

  Rng rng(seed);
  const int len = rng.uniform_int(min_len, max_len);
  int start = -1;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int cand = rng.uniform_int(0, T - len);
    if (area(cand) > 0.0) {
      start = cand;
      break;
    }
  }
  if (start < 0) {
    // Deterministic fallback; frame 0 always qualifies by invariant.
    for (int cand = 0; cand <= T - len; ++cand) {
      if (area(cand) > 0.0) {
        start = cand;
        break;
      }
    }
  }
  if (start < 0) fail_invalid("sample_snippet: no window with a visible first frame");

  SequencePair out;
  out.first.seq_id = pair.first.seq_id;
  out.second.object_id = pair.second.object_id;
  const int h = m.dim(2), w = m.dim(3);
  out.first.frames = Tensor({len, 3, h, w});
  out.second.masks = Tensor({len, 1, h, w});
  std::copy(pair.first.frames.v.begin() + static_cast<int64_t>(start) * 3 * hw,
            pair.first.frames.v.begin() + static_cast<int64_t>(start + len) * 3 * hw,
            out.first.frames.v.begin());
  std::copy(m.v.begin() + static_cast<int64_t>(start) * hw,
            m.v.begin() + static_cast<int64_t>(start + len) * hw,
            out.second.masks.v.begin());
  return out;
}

}  // namespace hs2s::synth
