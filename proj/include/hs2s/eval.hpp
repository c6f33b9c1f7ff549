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

#ifndef HS2S_EVAL_HPP
#define HS2S_EVAL_HPP

#include <map>
#include <string>
#include <vector>

#include "hs2s/synthdata.hpp"
#include "hs2s/tensor.hpp"

namespace hs2s::eval {

// Region similarity J and boundary accuracy F for one predicted frame.
// Predictions start at step 1 (step 0 is the given reference mask), so
// t runs over 1..T-1.
struct FrameScore {
  int t = 0;
  double j = 0.0;
  double f = 0.0;
};

struct SequenceReport {
  std::string seq_id;
  int length = 0;  // frames in the underlying video (scores cover 1..length-1)
  std::vector<FrameScore> frames;
};

// Inclusive run of frames whose foreground area is <= threshold, with
// area above threshold immediately before and after (the object must
// come back for the run to count as an occlusion).
struct OcclusionEvent {
  int start = 0;
  int end = 0;
  double threshold = 0.0;
};

struct LengthSplit {
  bool has_data = false;
  double f_early = 0.0, j_early = 0.0;
  double f_late = 0.0, j_late = 0.0;
};

struct OcclusionSplit {
  double threshold = 0.0;
  bool has_events = false;
  // Mean (J+F)/2 over frames strictly after each qualifying sequence's
  // first occlusion, pooled across those sequences.
  double post_occlusion_jf = 0.0;
  int n_sequences_with_events = 0;
  // Mean (J+F)/2 over every scored frame of every sequence, for context.
  double overall_jf = 0.0;
};

struct MetricsReport {
  std::vector<SequenceReport> sequences;
  int64_t n_frames = 0;
  double mean_j = 0.0, mean_f = 0.0, mean_jf = 0.0;
  LengthSplit length_split;
  std::vector<OcclusionSplit> occlusion_splits;
  std::map<int, int> length_histogram;
};

struct EvalParams {
  double tol_fraction = 0.008;  // boundary-match radius as a diagonal fraction
  int early_cut = 10;
  int late_cut = 20;
  int min_len = 20;
  std::vector<double> occlusion_thresholds = {0.0, 50.0, 100.0};
};

// Intersection over union of two binary [H,W] masks; both empty -> 1.
double jaccard(const Tensor& pred, const Tensor& gt);

// Boundary F-measure of two binary [H,W] masks. Boundaries are
// foreground pixels with a background 4-neighbor (border counts as
// background); a boundary pixel matches if any counterpart lies within
// Euclidean radius ceil(tol_fraction * image diagonal). Both boundaries
// empty -> 1; exactly one empty -> 0.
double boundary_f(const Tensor& pred, const Tensor& gt, double tol_fraction = 0.008);

// Scores soft predictions [N,1,H,W] against binary targets [N,1,H,W];
// predictions are thresholded at 0.5 here. Row i is scored as step i+1.
std::vector<FrameScore> evaluate_sequence(const Tensor& pred, const Tensor& gt,
                                          double tol_fraction = 0.008);

// Early/late-frame averages over sequences longer than min_len frames:
// J and F pooled over steps t < early_cut and steps t > late_cut.
LengthSplit length_analysis(const std::vector<SequenceReport>& reports,
                            int early_cut = 10, int late_cut = 20, int min_len = 20);

// Maximal runs with area <= threshold after frame 0 that end before the
// sequence does (the object re-appears). Requires frame 0 area > threshold.
std::vector<OcclusionEvent> find_occlusions(const synth::MaskSequence& gt,
                                            double threshold);

// One split per threshold; reports must align 1:1 with gts.
std::vector<OcclusionSplit> occlusion_analysis(
    const std::vector<SequenceReport>& reports,
    const std::vector<synth::MaskSequence>& gts,
    const std::vector<double>& thresholds = {0.0, 50.0, 100.0});

std::map<int, int> length_histogram(const std::vector<synth::MaskSequence>& gts);

// Pools per-sequence scores into the full report (means, splits,
// histogram). reports and gts must align 1:1.
MetricsReport assemble_report(const std::vector<SequenceReport>& reports,
                              const std::vector<synth::MaskSequence>& gts,
                              const EvalParams& params = {});

// Writes report.json, report.csv (seq_id,t,J,F per frame),
// length_analysis.csv, occlusion_analysis.csv and length_histogram.csv
// into out_dir. Identical reports serialize to byte-identical files.
void write_report(const MetricsReport& report, const std::string& out_dir);

}  // namespace hs2s::eval

#endif  // HS2S_EVAL_HPP
