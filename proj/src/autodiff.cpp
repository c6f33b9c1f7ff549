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

#include "hs2s/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <utility>

namespace hs2s::ad {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

// ---- Tape ---------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) {
    if (nodes_[p].needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  n.parents = std::move(parents);
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor* Tape::grad_accum(int idx) {
  Node& n = nodes_[idx];
  if (!n.needs_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape);
    n.has_grad = true;
  }
  return &n.grad;
}

const Tensor& Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.idx];
  if (!n.has_grad) fail_runtime("Tape::grad: no gradient accumulated for node");
  return n.grad;
}

void Tape::backward(const Var& out) {
  if (out.tape != this) fail_invalid("Tape::backward: var from another tape");
  if (swept_) fail_invalid("Tape::backward: tape already swept");
  Node& o = nodes_[out.idx];
  if (o.value.numel() != 1) fail_invalid("Tape::backward: output must be scalar");
  if (!o.needs_grad) fail_invalid("Tape::backward: output does not depend on any leaf");
  o.grad = Tensor(o.value.shape, 1.0);
  o.has_grad = true;
  for (int i = out.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.back) n.back(*this, i);
  }
  swept_ = true;
}

// ---- Elementwise helpers ------------------------------------------------

namespace {

Var unary(Var a, Tensor out, std::function<void(Tape&, int)> back) {
  return a.tape->make(std::move(out), {a.idx}, std::move(back));
}

void require_same_tape(Var a, Var b, const char* where) {
  if (a.tape != b.tape) fail_invalid(strformat("%s: vars from different tapes", where));
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  Tape& t = *a.tape;
  check_same_shape(t.val(a), t.val(b), "add");
  Tensor out = t.val(a);
  const Tensor& bv = t.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[i] += bv.v[i];
  int ai = a.idx, bi = b.idx;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) ga->v[i] += go.v[i];
    }
    if (Tensor* gb = t.grad_accum(bi)) {
      for (int64_t i = 0; i < go.numel(); ++i) gb->v[i] += go.v[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  Tape& t = *a.tape;
  check_same_shape(t.val(a), t.val(b), "sub");
  Tensor out = t.val(a);
  const Tensor& bv = t.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[i] -= bv.v[i];
  int ai = a.idx, bi = b.idx;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) ga->v[i] += go.v[i];
    }
    if (Tensor* gb = t.grad_accum(bi)) {
      for (int64_t i = 0; i < go.numel(); ++i) gb->v[i] -= go.v[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  check_same_shape(t.val(a), t.val(b), "mul");
  Tensor out = t.val(a);
  const Tensor& bv = t.val(b);
  for (int64_t i = 0; i < out.numel(); ++i) out.v[i] *= bv.v[i];
  int ai = a.idx, bi = b.idx;
  return t.make(std::move(out), {ai, bi}, [ai, bi](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& av = t.val(ai);
    const Tensor& bv = t.val(bi);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) ga->v[i] += go.v[i] * bv.v[i];
    }
    if (Tensor* gb = t.grad_accum(bi)) {
      for (int64_t i = 0; i < go.numel(); ++i) gb->v[i] += go.v[i] * av.v[i];
    }
  });
}

Var affine(Var a, double k, double c) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = k * x + c;
  int ai = a.idx;
  return unary(a, std::move(out), [ai, k](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) ga->v[i] += k * go.v[i];
    }
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  int ai = a.idx;
  return unary(a, std::move(out), [ai](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& av = t.val(ai);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) {
        if (av.v[i] > 0.0) ga->v[i] += go.v[i];
      }
    }
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  int ai = a.idx;
  return unary(a, std::move(out), [ai](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& ov = t.val(self);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) {
        ga->v[i] += go.v[i] * ov.v[i] * (1.0 - ov.v[i]);
      }
    }
  });
}

Var tanh_op(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = std::tanh(x);
  int ai = a.idx;
  return unary(a, std::move(out), [ai](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& ov = t.val(self);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) {
        ga->v[i] += go.v[i] * (1.0 - ov.v[i] * ov.v[i]);
      }
    }
  });
}

Var log_op(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = std::log(x);
  int ai = a.idx;
  return unary(a, std::move(out), [ai](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& av = t.val(ai);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) ga->v[i] += go.v[i] / av.v[i];
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Tensor out = t.val(a);
  for (double& x : out.v) x = std::clamp(x, lo, hi);
  int ai = a.idx;
  return unary(a, std::move(out), [ai, lo, hi](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& av = t.val(ai);
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int64_t i = 0; i < go.numel(); ++i) {
        if (av.v[i] >= lo && av.v[i] <= hi) ga->v[i] += go.v[i];
      }
    }
  });
}

Var concat_ch(Var a, Var b) {
  require_same_tape(a, b, "concat_ch");
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    fail_invalid(strformat("concat_ch: incompatible shapes %s vs %s",
                           av.shape_str().c_str(), bv.shape_str().c_str()));
  }
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const int64_t hw = static_cast<int64_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * hw, av.data() + i * ca * hw,
                sizeof(double) * ca * hw);
    std::memcpy(out.data() + (i * (ca + cb) + ca) * hw, bv.data() + i * cb * hw,
                sizeof(double) * cb * hw);
  }
  int ai = a.idx, bi = b.idx;
  return t.make(std::move(out), {ai, bi}, [ai, bi, n, ca, cb, hw](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int i = 0; i < n; ++i) {
        const double* src = go.data() + i * (ca + cb) * hw;
        double* dst = ga->data() + i * ca * hw;
        for (int64_t j = 0; j < ca * hw; ++j) dst[j] += src[j];
      }
    }
    if (Tensor* gb = t.grad_accum(bi)) {
      for (int i = 0; i < n; ++i) {
        const double* src = go.data() + (i * (ca + cb) + ca) * hw;
        double* dst = gb->data() + i * cb * hw;
        for (int64_t j = 0; j < cb * hw; ++j) dst[j] += src[j];
      }
    }
  });
}

Var stack_batch(const std::vector<Var>& xs) {
  if (xs.empty()) fail_invalid("stack_batch: need at least one input");
  Tape& t = *xs[0].tape;
  const Tensor& first = t.val(xs[0]);
  if (first.ndim() != 4 || first.dim(0) != 1) {
    fail_invalid(strformat("stack_batch: inputs must be [1,C,H,W], got %s",
                           first.shape_str().c_str()));
  }
  const int n = static_cast<int>(xs.size());
  const int64_t item = first.numel();
  std::vector<int> parents;
  parents.reserve(n);
  for (const Var& x : xs) {
    if (x.tape != &t) fail_invalid("stack_batch: inputs live on different tapes");
    if (!t.val(x).same_shape(first)) {
      fail_invalid(strformat("stack_batch: shape %s differs from %s",
                             t.val(x).shape_str().c_str(), first.shape_str().c_str()));
    }
    parents.push_back(x.idx);
  }
  Tensor out({n, first.dim(1), first.dim(2), first.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * item, t.val(parents[i]).data(), sizeof(double) * item);
  }
  std::vector<int> ps = parents;
  return t.make(std::move(out), parents, [ps, item](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    for (size_t i = 0; i < ps.size(); ++i) {
      if (Tensor* g = t.grad_accum(ps[i])) {
        const double* src = go.data() + static_cast<int64_t>(i) * item;
        for (int64_t j = 0; j < item; ++j) g->v[j] += src[j];
      }
    }
  });
}

Var slice_ch(Var a, int c0, int c1) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  if (av.ndim() != 4 || c0 < 0 || c1 > av.dim(1) || c0 >= c1) {
    fail_invalid(strformat("slice_ch: bad range [%d,%d) for %s", c0, c1,
                           av.shape_str().c_str()));
  }
  const int n = av.dim(0), c = av.dim(1), cs = c1 - c0;
  const int64_t hw = static_cast<int64_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, cs, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * cs * hw, av.data() + (i * c + c0) * hw,
                sizeof(double) * cs * hw);
  }
  int ai = a.idx;
  return unary(a, std::move(out), [ai, n, c, c0, cs, hw](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int i = 0; i < n; ++i) {
        const double* src = go.data() + i * cs * hw;
        double* dst = ga->data() + (i * c + c0) * hw;
        for (int64_t j = 0; j < cs * hw; ++j) dst[j] += src[j];
      }
    }
  });
}

Var upsample2(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  if (av.ndim() != 4) fail_invalid("upsample2: expected NCHW tensor");
  const int n = av.dim(0), c = av.dim(1), h = av.dim(2), w = av.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = av.data() + (static_cast<int64_t>(i) * c + ch) * h * w;
      double* dst = out.data() + (static_cast<int64_t>(i) * c + ch) * 4 * h * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double v = src[y * w + x];
          dst[(2 * y) * 2 * w + 2 * x] = v;
          dst[(2 * y) * 2 * w + 2 * x + 1] = v;
          dst[(2 * y + 1) * 2 * w + 2 * x] = v;
          dst[(2 * y + 1) * 2 * w + 2 * x + 1] = v;
        }
      }
    }
  }
  int ai = a.idx;
  return unary(a, std::move(out), [ai, n, c, h, w](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    if (Tensor* ga = t.grad_accum(ai)) {
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const double* src = go.data() + (static_cast<int64_t>(i) * c + ch) * 4 * h * w;
          double* dst = ga->data() + (static_cast<int64_t>(i) * c + ch) * h * w;
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              dst[y * w + x] += src[(2 * y) * 2 * w + 2 * x] +
                                src[(2 * y) * 2 * w + 2 * x + 1] +
                                src[(2 * y + 1) * 2 * w + 2 * x] +
                                src[(2 * y + 1) * 2 * w + 2 * x + 1];
            }
          }
        }
      }
    }
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  double s = 0.0;
  for (double x : av.v) s += x;
  Tensor out({1});
  out.v[0] = s;
  int ai = a.idx;
  return unary(a, std::move(out), [ai](Tape& t, int self) {
    const double g = t.grad(Var{&t, self}).v[0];
    if (Tensor* ga = t.grad_accum(ai)) {
      for (double& x : ga->v) x += g;
    }
  });
}

// ---- Convolution --------------------------------------------------------

namespace {

// col layout: [Ci*kh*kw, Ho*Wo], row index r = (c*kh + ky)*kw + kx.
void im2col(const double* src, int C, int H, int W, int kh, int kw, int stride,
            int ph, int pw, int Ho, int Wo, double* col) {
  for (int c = 0; c < C; ++c) {
    const double* chan = src + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                static_cast<int64_t>(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - ph + ky;
          double* out = row + static_cast<int64_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::memset(out, 0, sizeof(double) * Wo);
            continue;
          }
          const double* in = chan + static_cast<int64_t>(iy) * W;
          // Valid ox range keeps ix = ox*stride - pw + kx inside [0, W).
          int lo = 0;
          while (lo < Wo && lo * stride - pw + kx < 0) ++lo;
          int hi = Wo;
          while (hi > lo && (hi - 1) * stride - pw + kx >= W) --hi;
          for (int ox = 0; ox < lo; ++ox) out[ox] = 0.0;
          if (stride == 1) {
            if (hi > lo) std::memcpy(out + lo, in + lo - pw + kx, sizeof(double) * (hi - lo));
          } else {
            for (int ox = lo; ox < hi; ++ox) out[ox] = in[ox * stride - pw + kx];
          }
          for (int ox = hi; ox < Wo; ++ox) out[ox] = 0.0;
        }
      }
    }
  }
}

void col2im_acc(const double* col, int C, int H, int W, int kh, int kw,
                int stride, int ph, int pw, int Ho, int Wo, double* dst) {
  for (int c = 0; c < C; ++c) {
    double* chan = dst + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) *
                                      static_cast<int64_t>(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - ph + ky;
          if (iy < 0 || iy >= H) continue;
          double* out = chan + static_cast<int64_t>(iy) * W;
          const double* in = row + static_cast<int64_t>(oy) * Wo;
          int lo = 0;
          while (lo < Wo && lo * stride - pw + kx < 0) ++lo;
          int hi = Wo;
          while (hi > lo && (hi - 1) * stride - pw + kx >= W) --hi;
          for (int ox = lo; ox < hi; ++ox) out[ox * stride - pw + kx] += in[ox];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int ph, int pw) {
  require_same_tape(x, w, "conv2d");
  require_same_tape(x, b, "conv2d");
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  if (xv.ndim() != 4 || wv.ndim() != 4) fail_invalid("conv2d: x and w must be 4-D");
  const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != Ci) {
    fail_invalid(strformat("conv2d: weight expects %d input channels, got %d",
                           wv.dim(1), Ci));
  }
  if (bv.numel() != Co) fail_invalid("conv2d: bias size mismatch");
  if (stride < 1) fail_invalid("conv2d: stride must be >= 1");
  const int Ho = (H + 2 * ph - kh) / stride + 1;
  const int Wo = (W + 2 * pw - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) fail_invalid("conv2d: non-positive output size");

  const int64_t ckk = static_cast<int64_t>(Ci) * kh * kw;
  const int64_t hw = static_cast<int64_t>(Ho) * Wo;
  const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0);

  Tensor out({N, Co, Ho, Wo});
  // im2col buffers are kept for the weight-gradient GEMM in backward.
  auto cols = std::make_shared<std::vector<double>>();
  if (!pointwise) {
    cols->resize(static_cast<size_t>(N) * ckk * hw);
  }
  CMapM Wm(wv.data(), Co, ckk);
  for (int n = 0; n < N; ++n) {
    const double* colp;
    if (pointwise) {
      colp = xv.data() + static_cast<int64_t>(n) * Ci * H * W;
    } else {
      double* cp = cols->data() + static_cast<size_t>(n) * ckk * hw;
      im2col(xv.data() + static_cast<int64_t>(n) * Ci * H * W, Ci, H, W, kh, kw,
             stride, ph, pw, Ho, Wo, cp);
      colp = cp;
    }
    CMapM Col(colp, ckk, hw);
    MapM Out(out.data() + static_cast<int64_t>(n) * Co * hw, Co, hw);
    Out.noalias() = Wm * Col;
    for (int co = 0; co < Co; ++co) {
      Out.row(co).array() += bv.v[co];
    }
  }

  int xi = x.idx, wi = w.idx, bi = b.idx;
  return t.make(
      std::move(out), {xi, wi, bi},
      [=](Tape& t, int self) {
        const Tensor& go = t.grad(Var{&t, self});
        const Tensor& xv = t.val(xi);
        CMapM Wback(t.val(wi).data(), Co, ckk);
        if (Tensor* gb = t.grad_accum(bi)) {
          for (int n = 0; n < N; ++n) {
            const double* g = go.data() + static_cast<int64_t>(n) * Co * hw;
            for (int co = 0; co < Co; ++co) {
              double s = 0.0;
              for (int64_t j = 0; j < hw; ++j) s += g[co * hw + j];
              gb->v[co] += s;
            }
          }
        }
        Tensor* gw = t.grad_accum(wi);
        Tensor* gx = t.grad_accum(xi);
        std::vector<double> colgrad;
        if (gx && !pointwise) colgrad.resize(static_cast<size_t>(ckk) * hw);
        for (int n = 0; n < N; ++n) {
          CMapM Go(go.data() + static_cast<int64_t>(n) * Co * hw, Co, hw);
          const double* colp = pointwise
                                   ? xv.data() + static_cast<int64_t>(n) * Ci * H * W
                                   : cols->data() + static_cast<size_t>(n) * ckk * hw;
          if (gw) {
            CMapM Col(colp, ckk, hw);
            MapM Gw(gw->data(), Co, ckk);
            Gw.noalias() += Go * Col.transpose();
          }
          if (gx) {
            double* gxp = gx->data() + static_cast<int64_t>(n) * Ci * H * W;
            if (pointwise) {
              MapM Gx(gxp, ckk, hw);
              Gx.noalias() += Wback.transpose() * Go;
            } else {
              MapM Cg(colgrad.data(), ckk, hw);
              Cg.noalias() = Wback.transpose() * Go;
              col2im_acc(colgrad.data(), Ci, H, W, kh, kw, stride, ph, pw, Ho,
                         Wo, gxp);
            }
          }
        }
      });
}

// ---- Fused ops ----------------------------------------------------------

Var channel_cosine(Var a, Var b, double eps) {
  require_same_tape(a, b, "channel_cosine");
  Tape& t = *a.tape;
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  check_same_shape(av, bv, "channel_cosine");
  if (av.ndim() != 4) fail_invalid("channel_cosine: expected NCHW tensors");
  const int n = av.dim(0), c = av.dim(1), h = av.dim(2), w = av.dim(3);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    for (int64_t p = 0; p < hw; ++p) {
      double s = 0.0, qa = 0.0, qb = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const int64_t off = (static_cast<int64_t>(i) * c + ch) * hw + p;
        s += av.v[off] * bv.v[off];
        qa += av.v[off] * av.v[off];
        qb += bv.v[off] * bv.v[off];
      }
      out.v[i * hw + p] = s / (std::sqrt(qa + eps) * std::sqrt(qb + eps));
    }
  }
  int ai = a.idx, bi = b.idx;
  return t.make(std::move(out), {ai, bi}, [=](Tape& t, int self) {
    const Tensor& go = t.grad(Var{&t, self});
    const Tensor& av = t.val(ai);
    const Tensor& bv = t.val(bi);
    Tensor* ga = t.grad_accum(ai);
    Tensor* gb = t.grad_accum(bi);
    for (int i = 0; i < n; ++i) {
      for (int64_t p = 0; p < hw; ++p) {
        double s = 0.0, qa = 0.0, qb = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const int64_t off = (static_cast<int64_t>(i) * c + ch) * hw + p;
          s += av.v[off] * bv.v[off];
          qa += av.v[off] * av.v[off];
          qb += bv.v[off] * bv.v[off];
        }
        const double ra = std::sqrt(qa + eps), rb = std::sqrt(qb + eps);
        const double g = go.v[i * hw + p];
        for (int ch = 0; ch < c; ++ch) {
          const int64_t off = (static_cast<int64_t>(i) * c + ch) * hw + p;
          if (ga) {
            ga->v[off] += g * (bv.v[off] / (ra * rb) -
                               s * av.v[off] / (ra * ra * ra * rb));
          }
          if (gb) {
            gb->v[off] += g * (av.v[off] / (ra * rb) -
                               s * bv.v[off] / (rb * rb * rb * ra));
          }
        }
      }
    }
  });
}

Var softmax_ce_mean(Var logits, const Tensor& targets) {
  Tape& t = *logits.tape;
  const Tensor& lv = t.val(logits);
  if (lv.ndim() != 4) fail_invalid("softmax_ce_mean: logits must be [N,K,H,W]");
  const int n = lv.dim(0), k = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
  if (targets.ndim() != 3 || targets.dim(0) != n || targets.dim(1) != h ||
      targets.dim(2) != w) {
    fail_invalid(strformat("softmax_ce_mean: targets %s incompatible with logits %s",
                           targets.shape_str().c_str(), lv.shape_str().c_str()));
  }
  const int64_t hw = static_cast<int64_t>(h) * w;
  const double npix = static_cast<double>(n) * hw;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int64_t p = 0; p < hw; ++p) {
      const double traw = targets.v[i * hw + p];
      const int tc = static_cast<int>(traw);
      if (traw != static_cast<double>(tc) || tc < 0 || tc >= k) {
        fail_invalid(strformat("softmax_ce_mean: class index %g out of range [0,%d)",
                               traw, k));
      }
      double m = -1e300;
      for (int ch = 0; ch < k; ++ch) {
        m = std::max(m, lv.v[(static_cast<int64_t>(i) * k + ch) * hw + p]);
      }
      double se = 0.0;
      for (int ch = 0; ch < k; ++ch) {
        se += std::exp(lv.v[(static_cast<int64_t>(i) * k + ch) * hw + p] - m);
      }
      const double lse = m + std::log(se);
      loss += lse - lv.v[(static_cast<int64_t>(i) * k + tc) * hw + p];
    }
  }
  Tensor out({1});
  out.v[0] = loss / npix;
  int li = logits.idx;
  Tensor tcopy = targets;
  return t.make(std::move(out), {li}, [=, tg = std::move(tcopy)](Tape& t, int self) {
    const double g = t.grad(Var{&t, self}).v[0];
    const Tensor& lv = t.val(li);
    if (Tensor* gl = t.grad_accum(li)) {
      for (int i = 0; i < n; ++i) {
        for (int64_t p = 0; p < hw; ++p) {
          const int tc = static_cast<int>(tg.v[i * hw + p]);
          double m = -1e300;
          for (int ch = 0; ch < k; ++ch) {
            m = std::max(m, lv.v[(static_cast<int64_t>(i) * k + ch) * hw + p]);
          }
          double se = 0.0;
          for (int ch = 0; ch < k; ++ch) {
            se += std::exp(lv.v[(static_cast<int64_t>(i) * k + ch) * hw + p] - m);
          }
          for (int ch = 0; ch < k; ++ch) {
            const int64_t off = (static_cast<int64_t>(i) * k + ch) * hw + p;
            const double soft = std::exp(lv.v[off] - m) / se;
            gl->v[off] += g * (soft - (ch == tc ? 1.0 : 0.0)) / npix;
          }
        }
      }
    }
  });
}

}  // namespace hs2s::ad
