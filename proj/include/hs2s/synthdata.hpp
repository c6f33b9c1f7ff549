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

#ifndef HS2S_SYNTHDATA_HPP
#define HS2S_SYNTHDATA_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hs2s/tensor.hpp"

namespace hs2s::synth {

struct VideoSequence {
  Tensor frames;  // [T,3,H,W], values in [0,1]
  std::string seq_id;
  int t() const { return frames.ndim() == 4 ? frames.dim(0) : 0; }
};

struct MaskSequence {
  Tensor masks;  // [T,1,H,W], values in {0,1}
  std::string object_id;
};

using SequencePair = std::pair<VideoSequence, MaskSequence>;

// Checks the paired invariants: matching shapes, value ranges, binary
// masks, nonzero first-frame area, multiple-of-32 dimensions.
void validate_pair(const SequencePair& pair);

enum class ShapeKind { kSquare, kCircle, kTriangle };

const char* shape_kind_name(ShapeKind k);
ShapeKind shape_kind_from_name(const std::string& name);

struct SynthConfig {
  int h = 64;
  int w = 64;
  int t = 8;
  int n_distractors = 1;
  // Inclusive frame range during which the target is fully absent.
  std::optional<std::pair<int, int>> occlusion_interval;
  double motion_speed = 2.0;
  ShapeKind shape_kind = ShapeKind::kSquare;
  uint64_t seed = 0;

  void validate() const;
};

struct AugConfig {
  double hflip_prob = 0.0;
  double max_rotation = 0.0;     // degrees
  double max_translation = 0.0;  // fraction of H/W
  double max_scale_delta = 0.0;  // fraction around 1

  void validate() const;
};

// Renders one sequence: a gradient background, n_distractors shapes of the
// target's kind and colour family, and the target drawn on top (so the
// label mask is exactly its silhouette). Deterministic in config.seed.
SequencePair generate_sequence(const SynthConfig& cfg);

// One affine transform (flip/rotate/scale/translate about the image
// centre) applied to every frame of the pair; masks are bilinearly
// resampled and re-binarized at 0.5. The all-zero config is the exact
// identity.
SequencePair augment(const SequencePair& pair, const AugConfig& aug, uint64_t seed);

struct ManifestEntry {
  std::string id;
  int length = 0;
};

// Writes root/manifest.json plus sequences/<id>/{frames,masks}/%05d.png
// (8-bit RGB frames, 0/255 grayscale masks) and returns the manifest.
std::vector<ManifestEntry> write_dataset(const std::vector<SequencePair>& data,
                                         const std::string& root);

// Loads every sequence listed in root/manifest.json, in manifest order.
// Masks binarize at 128/255. Validation failures are distinct errors.
std::vector<SequencePair> load_dataset(const std::string& root);

// Loads a single sequence directory (dir/frames/NNNNN.png). The frame
// count is the number of PNGs in frames/. masks/00000.png is required;
// later masks are optional and read as empty when absent. The directory
// name becomes the sequence id.
SequencePair load_sequence_dir(const std::string& dir);

// Contiguous window with uniform length in [min_len, max_len] and uniform
// start; the window must begin on a frame with nonzero mask area.
SequencePair sample_snippet(const SequencePair& pair, int min_len, int max_len,
                            uint64_t seed);

}  // namespace hs2s::synth

#endif  // HS2S_SYNTHDATA_HPP
