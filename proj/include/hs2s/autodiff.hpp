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

#ifndef HS2S_AUTODIFF_HPP
#define HS2S_AUTODIFF_HPP

#include <deque>
#include <functional>
#include <vector>

#include "hs2s/tensor.hpp"

namespace hs2s::ad {

class Tape;

// Lightweight handle into a Tape. Copyable, trivially cheap.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

// Reverse-mode tape. One tape owns one computation (e.g. the forward pass
// of one snippet plus its loss); it is not thread-safe and is meant to be
// used by a single thread and discarded after backward().
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);

  // Records an op node. `back` receives the tape and the node's own index
  // and must push gradient contributions into the parents via grad_accum().
  Var make(Tensor value, std::vector<int> parents,
           std::function<void(Tape&, int)> back);

  // References returned by val()/grad() stay valid for the tape's entire
  // lifetime (node storage is a deque; growth never moves nodes).
  const Tensor& val(const Var& v) const { return nodes_[v.idx].value; }
  const Tensor& val(int idx) const { return nodes_[idx].value; }
  bool requires_grad(int idx) const { return nodes_[idx].needs_grad; }

  // Gradient buffer for a node, allocated (zeroed) on first access.
  // Returns nullptr when the node does not require gradients.
  Tensor* grad_accum(int idx);

  // Gradient of a node after backward(); fails if none was accumulated.
  const Tensor& grad(const Var& v) const;
  bool has_grad(const Var& v) const { return nodes_[v.idx].has_grad; }

  // Seeds d(out)/d(out) = 1 and sweeps the tape in reverse. `out` must be
  // scalar (numel == 1). May be called once per tape.
  void backward(const Var& out);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
  };
  std::deque<Node> nodes_;
  bool swept_ = false;
};

// ---- Elementwise and structural ops -------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// k * a + c, elementwise.
Var affine(Var a, double k, double c);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh_op(Var a);
Var log_op(Var a);
// Gradient is 1 inside [lo, hi] and 0 outside.
Var clamp(Var a, double lo, double hi);
// Concatenates along the channel axis of NCHW tensors.
Var concat_ch(Var a, Var b);
// Stacks N single-item [1,C,H,W] tensors into [N,C,H,W].
Var stack_batch(const std::vector<Var>& xs);
// Channels [c0, c1) of an NCHW tensor.
Var slice_ch(Var a, int c0, int c1);
// 2x nearest-neighbour upsampling of an NCHW tensor.
Var upsample2(Var a);
// Sum of all elements, as a [1] tensor.
Var sum_all(Var a);

// ---- Convolution --------------------------------------------------------

// x: [N,Ci,H,W], w: [Co,Ci,kh,kw], b: [Co]. Zero padding (ph,pw), square
// stride. Output [N,Co,Ho,Wo] with Ho = (H + 2*ph - kh)/stride + 1.
Var conv2d(Var x, Var w, Var b, int stride, int ph, int pw);

// ---- Fused ops with bespoke backward ------------------------------------

// Per-pixel cosine similarity across channels: a,b [N,C,H,W] -> [N,1,H,W].
// cos = <a,b> / (sqrt(|a|^2+eps) * sqrt(|b|^2+eps)).
Var channel_cosine(Var a, Var b, double eps = 1e-8);

// Mean multi-class cross-entropy with a stable log-softmax over the channel
// axis. logits [N,K,H,W]; targets [N,H,W] holding integer class ids.
Var softmax_ce_mean(Var logits, const Tensor& targets);

}  // namespace hs2s::ad

#endif  // HS2S_AUTODIFF_HPP
