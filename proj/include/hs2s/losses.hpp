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

#ifndef HS2S_LOSSES_HPP
#define HS2S_LOSSES_HPP

#include <cstdint>
#include <limits>
#include <vector>

#include "hs2s/autodiff.hpp"
#include "hs2s/tensor.hpp"

namespace hs2s {

// Distance value assigned when no boundary pixel exists (all-background
// mask). Chosen to exceed any edge bin so such pixels land in the last
// border class.
constexpr int kDistanceInf = std::numeric_limits<int32_t>::max();

struct LossConfig {
  // Weight on the segmentation term; the auxiliary border term gets 1-lambda.
  double lambda_seg = 0.8;
  // Probability clamp applied before logs.
  double eps = 1e-7;
  // Distance bin edges (pixels) for border classification; class count is
  // len(edges)+1.
  std::vector<int> border_bin_edges = {2, 5, 10};
  // When true, the class-balance weight beta is computed per frame instead
  // of pooled over the whole batch.
  bool beta_per_frame = false;

  int aux_classes() const { return static_cast<int>(border_bin_edges.size()) + 1; }
  void validate() const;
};

// Class-balanced binary cross-entropy, summed (not averaged) over pixels:
//   L = -beta * sum_fg log p - (1-beta) * sum_bg log(1-p),
// with beta = |bg| / |total| pooled over the batch (or per frame, by
// config). gt must be exactly 0/1; fg_prob is clamped to [eps, 1-eps].
ad::Var balanced_bce(ad::Var fg_prob, const Tensor& gt, const LossConfig& cfg);

// 4-connected distance of every pixel to the mask's boundary set. The
// boundary is the set of foreground pixels with at least one background
// 4-neighbour, with the image border padded as background. Background-side
// pixels measure distance to the same set. mask is [H,W] binary; returns
// row-major H*W distances, kDistanceInf when the mask has no foreground.
std::vector<int> distance_transform(const Tensor& mask);

// Border class per pixel: k = #{e in edges : e < d} for distance d.
std::vector<int> border_targets(const Tensor& mask, const std::vector<int>& edges);

// Stacks border_targets over a batch of masks [B,1,H,W] into a [B,H,W]
// tensor of class ids suitable for the cross-entropy op.
Tensor border_targets_batch(const Tensor& gt, const std::vector<int>& edges);

// Mean multi-class cross-entropy of aux_logits [B,K,H,W] against integer
// targets [B,H,W]; K must match the configured class count.
ad::Var border_loss(ad::Var aux_logits, const Tensor& targets, const LossConfig& cfg);

// lambda * l_seg + (1-lambda) * l_aux. Non-finite inputs abort loudly.
ad::Var total_loss(ad::Var l_seg, ad::Var l_aux, const LossConfig& cfg);

}  // namespace hs2s

#endif  // HS2S_LOSSES_HPP
