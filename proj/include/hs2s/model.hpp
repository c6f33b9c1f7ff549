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

#ifndef HS2S_MODEL_HPP
#define HS2S_MODEL_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hs2s/autodiff.hpp"
#include "hs2s/tensor.hpp"

namespace hs2s::model {

// Which propagation pathways feed the decoder.
enum class Variant {
  kS2SBaseline,   // recurrent pathway only; learned initial state
  kHs2sRef0Only,  // matching against frame 0 only
  kHs2sPrevOnly,  // matching against frame t-1 only
  kHs2sFull,      // both matching branches (default)
  kHs2sCosine,    // cosine-similarity maps instead of large-kernel branches
};

// Placement of the ReLU inside the recurrent cell. The default applies it
// to both the candidate activation and the state output; the alternatives
// keep a tanh at the other site.
enum class CellActivation { kReluBoth, kReluCandidateOnly, kReluStateOnly };

struct ModelConfig {
  int in_h = 64;
  int in_w = 64;
  // Width of encoder stage 1; doubles per stage.
  int base_channels = 4;
  // d: channels of the bottleneck features and the recurrent state.
  int bottleneck_channels = 32;
  int rnn_kernel = 3;
  // Effective kernel of the separable large-kernel merge branches.
  int gc_kernel = 7;
  std::vector<int> decoder_channels = {64, 32, 16, 8, 8};
  int aux_classes = 4;
  Variant variant = Variant::kHs2sFull;
  bool use_skip_rnn = true;
  CellActivation cell_activation = CellActivation::kReluBoth;

  void validate() const;
  // Encoder stage output widths (5 stages, doubling).
  std::vector<int> encoder_widths() const;
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
const char* cell_activation_name(CellActivation a);
CellActivation cell_activation_from_name(const std::string& name);

// Parameters are named tensors; the name's first dot-component is the
// parameter group (encoder, ref_encoder, rnn, merge, skip_rnn, decoder,
// head, init). std::map keeps iteration order deterministic.
using ParamDict = std::map<std::string, Tensor>;

struct ParamSpecEntry {
  std::string name;
  std::vector<int> shape;
};

// Full list of parameter names and shapes for a config, in a fixed order.
std::vector<ParamSpecEntry> param_spec(const ModelConfig& cfg);

// Fan-in scaled uniform initialization, biases zero, deterministic in seed.
ParamDict init_params(const ModelConfig& cfg, uint64_t seed);

// Validates that params exactly match param_spec(cfg) (names and shapes).
void check_params(const ModelConfig& cfg, const ParamDict& params);

// Parameters registered on a tape. Lookup by name; missing names fail.
struct ParamVars {
  std::map<std::string, ad::Var> vars;
  ad::Var at(const std::string& name) const;
};

ParamVars params_on_tape(ad::Tape& t, const ParamDict& params, bool requires_grad);

struct RnnVars {
  ad::Var h;
  ad::Var c;
};

struct EncodeOut {
  ad::Var bottleneck;            // [1, d, H/32, W/32]
  std::vector<ad::Var> pyramid;  // 5 levels at strides 2..32 (finest first)
};

// Mask-conditioned encoder: 4-channel input (RGB plus mask), five residual
// stride-2 stages, 1x1 projection to d channels. `prefix` selects the
// weight set ("encoder" or "ref_encoder").
EncodeOut encode(ad::Tape& t, ad::Var frame, ad::Var mask, const ParamVars& p,
                 const ModelConfig& cfg, const std::string& prefix);

// Reference pathway: same topology under the disjoint "ref_encoder"
// weights; only the bottleneck is needed.
ad::Var encode_reference(ad::Tape& t, ad::Var frame, ad::Var mask,
                         const ParamVars& p, const ModelConfig& cfg);

// One recurrent cell update. w stacks the four gate kernels over the
// output channel axis in the order input, forget, output, candidate.
RnnVars convlstm_step(ad::Tape& t, ad::Var x, const RnnVars& state, ad::Var w,
                      ad::Var b, CellActivation act);

// Sum of two separable large-kernel paths (kx1 then 1xk, and 1xk then
// kx1), linear, spatial size preserved. `prefix` names the branch
// parameter block (e.g. "merge.gc_a").
ad::Var global_conv(ad::Tape& t, ad::Var x, const ParamVars& p,
                    const std::string& prefix, int k);

// Combines the recurrent state with the reference features according to
// the variant. Baseline passes h through untouched.
ad::Var merge_features(ad::Tape& t, ad::Var h, std::optional<ad::Var> ref0,
                       std::optional<ad::Var> prev, const ParamVars& p,
                       const ModelConfig& cfg);

struct DecodeOut {
  ad::Var fg_prob;     // [1,1,H,W], strictly inside (0,1)
  ad::Var aux_logits;  // [1,K,H,W]
};

// Five upsample+conv stages with per-stage projected skip adds; the
// finest skip runs through its own recurrent cell whose state threads
// across timesteps via skip_state.
DecodeOut decode(ad::Tape& t, ad::Var merged, const std::vector<ad::Var>& pyramid,
                 std::optional<RnnVars>& skip_state, const ParamVars& p,
                 const ModelConfig& cfg);

enum class MaskSource { kGroundTruth, kPredicted };

struct SequenceOutput {
  std::vector<ad::Var> fg_probs;    // T-1 predictions [1,1,H,W]
  std::vector<ad::Var> aux_logits;  // T-1 logit maps [1,K,H,W]
};

// Runs one sequence. frames [T,3,H,W]; first_mask [1,H,W]; mask_feed has
// T-1 entries choosing the mask fed at each predicted step (entry 0 always
// behaves as ground truth: the first step can only see first_mask).
// Predicted feedback uses the soft probability map, keeping the whole
// rollout differentiable. gt_masks [T,1,H,W] is required when any step
// t >= 2 requests ground truth.
SequenceOutput forward_sequence(ad::Tape& t, const Tensor& frames,
                                const Tensor& first_mask, const ParamVars& p,
                                const ModelConfig& cfg,
                                const std::vector<MaskSource>& mask_feed,
                                const Tensor* gt_masks);

}  // namespace hs2s::model

#endif  // HS2S_MODEL_HPP
