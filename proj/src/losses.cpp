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

#include "hs2s/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hs2s {

void LossConfig::validate() const {
  if (lambda_seg < 0.0 || lambda_seg > 1.0) {
    fail_invalid(strformat("LossConfig: lambda_seg %g outside [0,1]", lambda_seg));
  }
  if (eps <= 0.0 || eps >= 0.5) {
    fail_invalid(strformat("LossConfig: eps %g outside (0,0.5)", eps));
  }
  if (border_bin_edges.empty()) fail_invalid("LossConfig: border_bin_edges empty");
  int prev = 0;
  for (int e : border_bin_edges) {
    if (e <= prev) fail_invalid("LossConfig: border_bin_edges must be strictly increasing and positive");
    prev = e;
  }
}

namespace {

void check_binary(const Tensor& gt, const char* where) {
  for (double x : gt.v) {
    if (x != 0.0 && x != 1.0) {
      fail_invalid(strformat("%s: ground truth must be exactly 0/1, got %g", where, x));
    }
  }
}

}  // namespace

ad::Var balanced_bce(ad::Var fg_prob, const Tensor& gt, const LossConfig& cfg) {
  ad::Tape& t = *fg_prob.tape;
  const Tensor& p = t.val(fg_prob);
  if (p.ndim() != 4 || p.dim(1) != 1) fail_invalid("balanced_bce: fg_prob must be [B,1,H,W]");
  check_same_shape(p, gt, "balanced_bce");
  check_binary(gt, "balanced_bce");

  const int b = p.dim(0);
  const int64_t hw = static_cast<int64_t>(p.dim(2)) * p.dim(3);
  // Foreground pixels weighted beta, background 1-beta; a single weighted
  // sum covers both the pooled and the per-frame beta variants.
  Tensor wf(p.shape), wb(p.shape);
  if (cfg.beta_per_frame) {
    for (int n = 0; n < b; ++n) {
      int64_t fg = 0;
      for (int64_t j = 0; j < hw; ++j) fg += gt.v[n * hw + j] == 1.0 ? 1 : 0;
      const double beta = static_cast<double>(hw - fg) / static_cast<double>(hw);
      for (int64_t j = 0; j < hw; ++j) {
        wf.v[n * hw + j] = beta * gt.v[n * hw + j];
        wb.v[n * hw + j] = (1.0 - beta) * (1.0 - gt.v[n * hw + j]);
      }
    }
  } else {
    int64_t fg = 0;
    for (double x : gt.v) fg += x == 1.0 ? 1 : 0;
    const double beta =
        static_cast<double>(gt.numel() - fg) / static_cast<double>(gt.numel());
    for (int64_t j = 0; j < gt.numel(); ++j) {
      wf.v[j] = beta * gt.v[j];
      wb.v[j] = (1.0 - beta) * (1.0 - gt.v[j]);
    }
  }

  ad::Var pc = ad::clamp(fg_prob, cfg.eps, 1.0 - cfg.eps);
  ad::Var fg_term = ad::mul(ad::log_op(pc), t.leaf(std::move(wf)));
  ad::Var bg_term = ad::mul(ad::log_op(ad::affine(pc, -1.0, 1.0)), t.leaf(std::move(wb)));
  return ad::affine(ad::add(ad::sum_all(fg_term), ad::sum_all(bg_term)), -1.0, 0.0);
}

std::vector<int> distance_transform(const Tensor& mask) {
  if (mask.ndim() != 2) fail_invalid("distance_transform: mask must be [H,W]");
  check_binary(mask, "distance_transform");
  const int h = mask.dim(0), w = mask.dim(1);
  // Internal "infinity" that survives +1 without overflow.
  const int big = 1 << 29;
  std::vector<int> d(static_cast<size_t>(h) * w, big);

  auto is_fg = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask.v[static_cast<int64_t>(y) * w + x] == 1.0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!is_fg(y, x)) continue;
      if (!is_fg(y - 1, x) || !is_fg(y + 1, x) || !is_fg(y, x - 1) || !is_fg(y, x + 1)) {
        d[static_cast<size_t>(y) * w + x] = 0;
      }
    }
  }

  // Two-pass city-block chamfer; exact for the 4-connected metric since
  // every pixel is traversable.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int& cur = d[static_cast<size_t>(y) * w + x];
      if (y > 0) cur = std::min(cur, d[static_cast<size_t>(y - 1) * w + x] + 1);
      if (x > 0) cur = std::min(cur, d[static_cast<size_t>(y) * w + x - 1] + 1);
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      int& cur = d[static_cast<size_t>(y) * w + x];
      if (y + 1 < h) cur = std::min(cur, d[static_cast<size_t>(y + 1) * w + x] + 1);
      if (x + 1 < w) cur = std::min(cur, d[static_cast<size_t>(y) * w + x + 1] + 1);
    }
  }

  for (int& x : d) {
    if (x >= big) x = kDistanceInf;
  }
  return d;
}

std::vector<int> border_targets(const Tensor& mask, const std::vector<int>& edges) {
  int prev = 0;
  for (int e : edges) {
    if (e <= prev) fail_invalid("border_targets: edges must be strictly increasing and positive");
    prev = e;
  }
  std::vector<int> cls = distance_transform(mask);
  for (int& c : cls) {
    int k = 0;
    for (int e : edges) k += e < c ? 1 : 0;
    c = k;
  }
  return cls;
}

Tensor border_targets_batch(const Tensor& gt, const std::vector<int>& edges) {
  if (gt.ndim() != 4 || gt.dim(1) != 1) {
    fail_invalid("border_targets_batch: gt must be [B,1,H,W]");
  }
  const int b = gt.dim(0), h = gt.dim(2), w = gt.dim(3);
  Tensor out({b, h, w});
  Tensor frame({h, w});
  for (int n = 0; n < b; ++n) {
    std::copy(gt.v.begin() + static_cast<int64_t>(n) * h * w,
              gt.v.begin() + static_cast<int64_t>(n + 1) * h * w, frame.v.begin());
    std::vector<int> cls = border_targets(frame, edges);
    for (int64_t j = 0; j < static_cast<int64_t>(h) * w; ++j) {
      out.v[static_cast<int64_t>(n) * h * w + j] = static_cast<double>(cls[j]);
    }
  }
  return out;
}

ad::Var border_loss(ad::Var aux_logits, const Tensor& targets, const LossConfig& cfg) {
  const Tensor& lv = aux_logits.tape->val(aux_logits);
  if (lv.ndim() != 4 || lv.dim(1) != cfg.aux_classes()) {
    fail_invalid(strformat("border_loss: expected %d logit channels, got %s",
                           cfg.aux_classes(), lv.shape_str().c_str()));
  }
  return ad::softmax_ce_mean(aux_logits, targets);
}

ad::Var total_loss(ad::Var l_seg, ad::Var l_aux, const LossConfig& cfg) {
  ad::Tape& t = *l_seg.tape;
  if (!std::isfinite(t.val(l_seg).v[0]) || !std::isfinite(t.val(l_aux).v[0])) {
    fail_runtime(strformat("total_loss: non-finite loss (seg=%g aux=%g)",
                           t.val(l_seg).v[0], t.val(l_aux).v[0]));
  }
  return ad::add(ad::affine(l_seg, cfg.lambda_seg, 0.0),
                 ad::affine(l_aux, 1.0 - cfg.lambda_seg, 0.0));
}

}  // namespace hs2s
