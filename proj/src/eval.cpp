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

#include "hs2s/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hs2s::eval {

namespace {

void check_binary_2d(const Tensor& m, const char* what) {
  if (m.ndim() != 2) fail_invalid(strformat("%s must be a 2-D mask", what));
  for (double v : m.v) {
    if (v != 0.0 && v != 1.0) fail_invalid(strformat("%s must be binary 0/1", what));
  }
}

// Foreground pixels adjacent (4-connectivity) to background, with the
// image border treated as background.
std::vector<char> boundary_mask(const Tensor& m) {
  const int h = m.dim(0), w = m.dim(1);
  std::vector<char> b(static_cast<size_t>(h) * w, 0);
  auto fg = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return false;
    return m.v[static_cast<size_t>(y) * w + x] == 1.0;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!fg(y, x)) continue;
      if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
        b[static_cast<size_t>(y) * w + x] = 1;
      }
    }
  return b;
}

double frame_area(const Tensor& masks, int t) {
  const int64_t hw = static_cast<int64_t>(masks.dim(2)) * masks.dim(3);
  double a = 0.0;
  for (int64_t j = 0; j < hw; ++j) a += masks.v[t * hw + j];
  return a;
}

std::string fmt_double(double v) { return strformat("%.17g", v); }

}  // namespace

double jaccard(const Tensor& pred, const Tensor& gt) {
  check_binary_2d(pred, "jaccard: pred");
  check_binary_2d(gt, "jaccard: gt");
  check_same_shape(pred, gt, "jaccard");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] == 1.0, g = gt.v[i] == 1.0;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double boundary_f(const Tensor& pred, const Tensor& gt, double tol_fraction) {
  check_binary_2d(pred, "boundary_f: pred");
  check_binary_2d(gt, "boundary_f: gt");
  check_same_shape(pred, gt, "boundary_f");
  if (!(tol_fraction >= 0.0)) fail_invalid("boundary_f: tol_fraction must be >= 0");
  const int h = pred.dim(0), w = pred.dim(1);
  const int r = static_cast<int>(
      std::ceil(tol_fraction * std::sqrt(static_cast<double>(h) * h +
                                         static_cast<double>(w) * w)));

  const std::vector<char> pb = boundary_mask(pred), gb = boundary_mask(gt);
  const int64_t np = std::count(pb.begin(), pb.end(), char(1));
  const int64_t ng = std::count(gb.begin(), gb.end(), char(1));
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  // Pixels within Euclidean radius r of any marked pixel, by stamping a
  // precomputed disc around each one.
  std::vector<std::pair<int, int>> disc;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dy * dy + dx * dx <= r * r) disc.emplace_back(dy, dx);
    }
  auto cover = [&](const std::vector<char>& src) {
    std::vector<char> c(src.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!src[static_cast<size_t>(y) * w + x]) continue;
        for (const auto& [dy, dx] : disc) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          c[static_cast<size_t>(yy) * w + xx] = 1;
        }
      }
    return c;
  };
  const std::vector<char> gcov = cover(gb), pcov = cover(pb);
  int64_t phit = 0, ghit = 0;
  for (size_t i = 0; i < pb.size(); ++i) {
    phit += pb[i] && gcov[i];
    ghit += gb[i] && pcov[i];
  }
  const double prec = static_cast<double>(phit) / static_cast<double>(np);
  const double rec = static_cast<double>(ghit) / static_cast<double>(ng);
  if (prec + rec == 0.0) return 0.0;
  return 2.0 * prec * rec / (prec + rec);
}

std::vector<FrameScore> evaluate_sequence(const Tensor& pred, const Tensor& gt,
                                          double tol_fraction) {
  if (pred.ndim() != 4 || pred.dim(1) != 1 || gt.ndim() != 4 || gt.dim(1) != 1) {
    fail_invalid("evaluate_sequence: expected [N,1,H,W] predictions and targets");
  }
  if (!pred.same_shape(gt)) {
    fail_invalid(strformat("evaluate_sequence: prediction %s vs target %s",
                           pred.shape_str().c_str(), gt.shape_str().c_str()));
  }
  const int n = pred.dim(0), h = pred.dim(2), w = pred.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<FrameScore> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tensor p({h, w}), g({h, w});
    for (int64_t j = 0; j < hw; ++j) {
      const double pv = pred.v[i * hw + j];
      if (!(pv >= 0.0 && pv <= 1.0)) {
        fail_invalid("evaluate_sequence: predictions must lie in [0,1]");
      }
      p.v[j] = pv >= 0.5 ? 1.0 : 0.0;
      g.v[j] = gt.v[i * hw + j];
    }
    FrameScore s;
    s.t = i + 1;
    s.j = jaccard(p, g);
    s.f = boundary_f(p, g, tol_fraction);
    out.push_back(s);
  }
  return out;
}

LengthSplit length_analysis(const std::vector<SequenceReport>& reports,
                            int early_cut, int late_cut, int min_len) {
  double je = 0, fe = 0, jl = 0, fl = 0;
  int64_t ne = 0, nl = 0;
  for (const SequenceReport& r : reports) {
    if (r.length <= min_len) continue;
    for (const FrameScore& s : r.frames) {
      if (s.t < early_cut) {
        je += s.j;
        fe += s.f;
        ++ne;
      }
      if (s.t > late_cut) {
        jl += s.j;
        fl += s.f;
        ++nl;
      }
    }
  }
  LengthSplit out;
  if (ne > 0 && nl > 0) {
    out.has_data = true;
    out.j_early = je / ne;
    out.f_early = fe / ne;
    out.j_late = jl / nl;
    out.f_late = fl / nl;
  }
  return out;
}

std::vector<OcclusionEvent> find_occlusions(const synth::MaskSequence& gt,
                                            double threshold) {
  const Tensor& m = gt.masks;
  if (m.ndim() != 4 || m.dim(1) != 1) fail_invalid("find_occlusions: masks must be [T,1,H,W]");
  const int T = m.dim(0);
  if (!(frame_area(m, 0) > threshold)) {
    fail_invalid(strformat("find_occlusions: frame 0 area must exceed threshold %g",
                           threshold));
  }
  std::vector<OcclusionEvent> events;
  int run_start = -1;
  for (int t = 1; t < T; ++t) {
    const bool low = frame_area(m, t) <= threshold;
    if (low && run_start < 0) run_start = t;
    if (!low && run_start >= 0) {
      events.push_back({run_start, t - 1, threshold});
      run_start = -1;
    }
  }
  // A run still open at the end never re-appears, so it is not an event.
  return events;
}

std::vector<OcclusionSplit> occlusion_analysis(
    const std::vector<SequenceReport>& reports,
    const std::vector<synth::MaskSequence>& gts,
    const std::vector<double>& thresholds) {
  if (reports.size() != gts.size()) {
    fail_invalid(strformat("occlusion_analysis: %zu reports vs %zu mask sequences",
                           reports.size(), gts.size()));
  }
  double all_sum = 0.0;
  int64_t all_n = 0;
  for (const SequenceReport& r : reports) {
    for (const FrameScore& s : r.frames) {
      all_sum += 0.5 * (s.j + s.f);
      ++all_n;
    }
  }
  const double overall = all_n > 0 ? all_sum / all_n : 0.0;

  std::vector<OcclusionSplit> out;
  for (double th : thresholds) {
    OcclusionSplit split;
    split.threshold = th;
    split.overall_jf = overall;
    double sum = 0.0;
    int64_t n = 0;
    for (size_t i = 0; i < reports.size(); ++i) {
      // A sequence whose object starts at or below the threshold has no
      // well-defined disappearance; treat it as event-free.
      if (!(frame_area(gts[i].masks, 0) > th)) continue;
      const std::vector<OcclusionEvent> events = find_occlusions(gts[i], th);
      if (events.empty()) continue;
      ++split.n_sequences_with_events;
      const int first_end = events.front().end;
      for (const FrameScore& s : reports[i].frames) {
        if (s.t > first_end) {
          sum += 0.5 * (s.j + s.f);
          ++n;
        }
      }
    }
    if (n > 0) {
      split.has_events = true;
      split.post_occlusion_jf = sum / n;
    }
    out.push_back(split);
  }
  return out;
}

std::map<int, int> length_histogram(const std::vector<synth::MaskSequence>& gts) {
  std::map<int, int> hist;
  for (const synth::MaskSequence& g : gts) {
    if (g.masks.ndim() != 4) fail_invalid("length_histogram: masks must be [T,1,H,W]");
    ++hist[g.masks.dim(0)];
  }
  return hist;
}

MetricsReport assemble_report(const std::vector<SequenceReport>& reports,
                              const std::vector<synth::MaskSequence>& gts,
                              const EvalParams& params) {
  if (reports.size() != gts.size()) {
    fail_invalid(strformat("assemble_report: %zu reports vs %zu mask sequences",
                           reports.size(), gts.size()));
  }
  MetricsReport rep;
  rep.sequences = reports;
  double jsum = 0, fsum = 0;
  for (const SequenceReport& r : reports) {
    for (const FrameScore& s : r.frames) {
      jsum += s.j;
      fsum += s.f;
      ++rep.n_frames;
    }
  }
  if (rep.n_frames > 0) {
    rep.mean_j = jsum / rep.n_frames;
    rep.mean_f = fsum / rep.n_frames;
    rep.mean_jf = 0.5 * (rep.mean_j + rep.mean_f);
  }
  rep.length_split = length_analysis(reports, params.early_cut, params.late_cut,
                                     params.min_len);
  rep.occlusion_splits = occlusion_analysis(reports, gts, params.occlusion_thresholds);
  rep.length_histogram = length_histogram(gts);
  return rep;
}

void write_report(const MetricsReport& report, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail_runtime(strformat("cannot create report directory '%s': %s",
                                 out_dir.c_str(), ec.message().c_str()));
  auto open = [&](const char* name) {
    std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
    if (!f) fail_runtime(strformat("cannot write '%s/%s'", out_dir.c_str(), name));
    return f;
  };

  {
    json j;
    j["n_frames"] = report.n_frames;
    j["mean_J"] = report.mean_j;
    j["mean_F"] = report.mean_f;
    j["mean_JF"] = report.mean_jf;
    j["length_split"] = {{"has_data", report.length_split.has_data},
                         {"F_early", report.length_split.f_early},
                         {"J_early", report.length_split.j_early},
                         {"F_late", report.length_split.f_late},
                         {"J_late", report.length_split.j_late}};
    j["occlusion_splits"] = json::array();
    for (const OcclusionSplit& s : report.occlusion_splits) {
      j["occlusion_splits"].push_back(
          {{"threshold", s.threshold},
           {"has_events", s.has_events},
           {"post_occlusion_JF", s.post_occlusion_jf},
           {"n_sequences_with_events", s.n_sequences_with_events},
           {"overall_JF", s.overall_jf}});
    }
    j["length_histogram"] = json::object();
    for (const auto& [len, count] : report.length_histogram) {
      j["length_histogram"][std::to_string(len)] = count;
    }
    j["sequences"] = json::array();
    for (const SequenceReport& r : report.sequences) {
      json frames = json::array();
      for (const FrameScore& s : r.frames) {
        frames.push_back({{"t", s.t}, {"J", s.j}, {"F", s.f}});
      }
      j["sequences"].push_back(
          {{"seq_id", r.seq_id}, {"length", r.length}, {"frames", frames}});
    }
    open("report.json") << j.dump(2) << "\n";
  }

  {
    std::ofstream f = open("report.csv");
    f << "seq_id,t,J,F\n";
    for (const SequenceReport& r : report.sequences) {
      for (const FrameScore& s : r.frames) {
        f << r.seq_id << "," << s.t << "," << fmt_double(s.j) << ","
          << fmt_double(s.f) << "\n";
      }
    }
  }

  {
    std::ofstream f = open("length_analysis.csv");
    f << "F_early,J_early,F_late,J_late\n";
    const LengthSplit& s = report.length_split;
    if (s.has_data) {
      f << fmt_double(s.f_early) << "," << fmt_double(s.j_early) << ","
        << fmt_double(s.f_late) << "," << fmt_double(s.j_late) << "\n";
    } else {
      f << ",,,\n";
    }
  }

  {
    std::ofstream f = open("occlusion_analysis.csv");
    f << "threshold,post_occlusion_JF,n_sequences_with_events,overall_JF\n";
    for (const OcclusionSplit& s : report.occlusion_splits) {
      f << fmt_double(s.threshold) << ","
        << (s.has_events ? fmt_double(s.post_occlusion_jf) : std::string()) << ","
        << s.n_sequences_with_events << "," << fmt_double(s.overall_jf) << "\n";
    }
  }

  {
    std::ofstream f = open("length_histogram.csv");
    f << "length,count\n";
    for (const auto& [len, count] : report.length_histogram) {
      f << len << "," << count << "\n";
    }
  }
}

}  // namespace hs2s::eval
