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

#include "hs2s/model.hpp"

#include <cmath>
#include <cstring>

#include "hs2s/rng.hpp"

namespace hs2s::model {

void ModelConfig::validate() const {
  if (in_h < 32 || in_w < 32 || in_h % 32 != 0 || in_w % 32 != 0) {
    fail_invalid(strformat("ModelConfig: input %dx%d must be a positive multiple of 32",
                           in_h, in_w));
  }
  if (base_channels < 1) fail_invalid("ModelConfig: base_channels must be >= 1");
  if (bottleneck_channels < 1) fail_invalid("ModelConfig: bottleneck_channels must be >= 1");
  if (rnn_kernel < 1 || rnn_kernel % 2 == 0) {
    fail_invalid(strformat("ModelConfig: rnn_kernel %d must be odd", rnn_kernel));
  }
  if (gc_kernel < 1 || gc_kernel % 2 == 0) {
    fail_invalid(strformat("ModelConfig: gc_kernel %d must be odd", gc_kernel));
  }
  if (decoder_channels.size() != 5) {
    fail_invalid("ModelConfig: decoder_channels must have exactly 5 entries");
  }
  for (int c : decoder_channels) {
    if (c < 1) fail_invalid("ModelConfig: decoder channel widths must be >= 1");
  }
  if (aux_classes < 2) fail_invalid("ModelConfig: aux_classes must be >= 2");
}

std::vector<int> ModelConfig::encoder_widths() const {
  std::vector<int> w(5);
  for (int s = 0; s < 5; ++s) w[s] = base_channels << s;
  return w;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kS2SBaseline: return "S2S_BASELINE";
    case Variant::kHs2sRef0Only: return "HS2S_REF0_ONLY";
    case Variant::kHs2sPrevOnly: return "HS2S_PREV_ONLY";
    case Variant::kHs2sFull: return "HS2S_FULL";
    case Variant::kHs2sCosine: return "HS2S_COSINE";
  }
  fail_invalid("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "S2S_BASELINE") return Variant::kS2SBaseline;
  if (name == "HS2S_REF0_ONLY") return Variant::kHs2sRef0Only;
  if (name == "HS2S_PREV_ONLY") return Variant::kHs2sPrevOnly;
  if (name == "HS2S_FULL") return Variant::kHs2sFull;
  if (name == "HS2S_COSINE") return Variant::kHs2sCosine;
  fail_invalid(strformat("unknown variant '%s'", name.c_str()));
}

const char* cell_activation_name(CellActivation a) {
  switch (a) {
    case CellActivation::kReluBoth: return "relu_both";
    case CellActivation::kReluCandidateOnly: return "relu_candidate_only";
    case CellActivation::kReluStateOnly: return "relu_state_only";
  }
  fail_invalid("cell_activation_name: unknown value");
}

CellActivation cell_activation_from_name(const std::string& name) {
  if (name == "relu_both") return CellActivation::kReluBoth;
  if (name == "relu_candidate_only") return CellActivation::kReluCandidateOnly;
  if (name == "relu_state_only") return CellActivation::kReluStateOnly;
  fail_invalid(strformat("unknown cell activation '%s'", name.c_str()));
}

std::vector<ParamSpecEntry> param_spec(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpecEntry> spec;
  auto add_conv = [&spec](const std::string& name, int co, int ci, int kh, int kw) {
    spec.push_back({name + ".w", {co, ci, kh, kw}});
    spec.push_back({name + ".b", {co}});
  };

  const int d = cfg.bottleneck_channels;
  const std::vector<int> widths = cfg.encoder_widths();
  for (const char* enc : {"encoder", "ref_encoder"}) {
    int cin = 4;  // RGB plus the mask channel
    for (int s = 1; s <= 5; ++s) {
      const int cout = widths[s - 1];
      const std::string sp = std::string(enc) + ".stage" + std::to_string(s);
      add_conv(sp + ".conv1", cout, cin, 3, 3);
      add_conv(sp + ".conv2", cout, cout, 3, 3);
      add_conv(sp + ".skip", cout, cin, 1, 1);
      cin = cout;
    }
    add_conv(std::string(enc) + ".proj", d, widths[4], 1, 1);
  }

  const int rk = cfg.rnn_kernel;
  add_conv("rnn.gates", 4 * d, 2 * d, rk, rk);

  const int k = cfg.gc_kernel;
  auto add_gc = [&](const std::string& prefix) {
    add_conv(prefix + ".path1.conv1", d, 2 * d, k, 1);
    add_conv(prefix + ".path1.conv2", d, d, 1, k);
    add_conv(prefix + ".path2.conv1", d, 2 * d, 1, k);
    add_conv(prefix + ".path2.conv2", d, d, k, 1);
  };
  switch (cfg.variant) {
    case Variant::kS2SBaseline:
      add_conv("init.h", d, d, 1, 1);
      add_conv("init.c", d, d, 1, 1);
      break;
    case Variant::kHs2sRef0Only:
      add_gc("merge.gc_a");
      add_conv("merge.fuse", d, d, 1, 1);
      break;
    case Variant::kHs2sPrevOnly:
      add_gc("merge.gc_b");
      add_conv("merge.fuse", d, d, 1, 1);
      break;
    case Variant::kHs2sFull:
      add_gc("merge.gc_a");
      add_gc("merge.gc_b");
      add_conv("merge.fuse", d, 2 * d, 1, 1);
      break;
    case Variant::kHs2sCosine:
      // Two similarity maps, each concatenated onto h before fusion.
      add_conv("merge.fuse", d, 2 * d + 2, 1, 1);
      break;
  }

  if (cfg.use_skip_rnn) {
    const int e1 = widths[0];
    add_conv("skip_rnn.gates", 4 * e1, 2 * e1, rk, rk);
    add_conv("skip_rnn.proj", e1, e1, 1, 1);
  }

  int fin = d;
  for (int s = 1; s <= 5; ++s) {
    const int lvl_ch = widths[5 - s];
    const std::string sp = "decoder.stage" + std::to_string(s);
    add_conv(sp + ".skip_proj", fin, lvl_ch, 1, 1);
    add_conv(sp + ".conv", cfg.decoder_channels[s - 1], fin, 5, 5);
    fin = cfg.decoder_channels[s - 1];
  }
  add_conv("head.fg", 1, fin, 1, 1);
  add_conv("head.aux", cfg.aux_classes, fin, 1, 1);
  return spec;
}

ParamDict init_params(const ModelConfig& cfg, uint64_t seed) {
  ParamDict params;
  Rng rng(seed);
  for (const ParamSpecEntry& e : param_spec(cfg)) {
    Tensor t(e.shape);
    if (e.shape.size() == 4) {
      const double fan_in = static_cast<double>(e.shape[1]) * e.shape[2] * e.shape[3];
      const double bound = std::sqrt(6.0 / fan_in);
      for (double& x : t.v) x = rng.uniform(-bound, bound);
    }
    // Biases stay zero.
    params.emplace(e.name, std::move(t));
  }
  return params;
}

void check_params(const ModelConfig& cfg, const ParamDict& params) {
  const auto spec = param_spec(cfg);
  if (params.size() != spec.size()) {
    fail_invalid(strformat("check_params: expected %zu tensors, got %zu",
                           spec.size(), params.size()));
  }
  for (const ParamSpecEntry& e : spec) {
    auto it = params.find(e.name);
    if (it == params.end()) {
      fail_invalid(strformat("check_params: missing parameter '%s'", e.name.c_str()));
    }
    if (it->second.shape != e.shape) {
      fail_invalid(strformat("check_params: '%s' has shape %s, expected %s",
                             e.name.c_str(), it->second.shape_str().c_str(),
                             Tensor(e.shape).shape_str().c_str()));
    }
    if (!it->second.all_finite()) {
      fail_runtime(strformat("check_params: '%s' contains non-finite values",
                             e.name.c_str()));
    }
  }
}

ad::Var ParamVars::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) fail_invalid(strformat("no parameter named '%s'", name.c_str()));
  return it->second;
}

ParamVars params_on_tape(ad::Tape& t, const ParamDict& params, bool requires_grad) {
  ParamVars pv;
  for (const auto& [name, tensor] : params) {
    pv.vars.emplace(name, t.leaf(tensor, requires_grad));
  }
  return pv;
}

namespace {

ad::Var conv1x1(ad::Tape&, ad::Var x, const ParamVars& p, const std::string& name) {
  return ad::conv2d(x, p.at(name + ".w"), p.at(name + ".b"), 1, 0, 0);
}

void check_mask_range(const Tensor& m, const char* where) {
  for (double x : m.v) {
    if (!(x >= 0.0 && x <= 1.0)) {
      fail_invalid(strformat("%s: mask value %g outside [0,1]", where, x));
    }
  }
}

}  // namespace

EncodeOut encode(ad::Tape& t, ad::Var frame, ad::Var mask, const ParamVars& p,
                 const ModelConfig& cfg, const std::string& prefix) {
  const Tensor& fv = t.val(frame);
  const Tensor& mv = t.val(mask);
  if (fv.ndim() != 4 || fv.dim(0) != 1 || fv.dim(1) != 3 || fv.dim(2) != cfg.in_h ||
      fv.dim(3) != cfg.in_w) {
    fail_invalid(strformat("encode: frame %s does not match config %dx%d",
                           fv.shape_str().c_str(), cfg.in_h, cfg.in_w));
  }
  if (mv.ndim() != 4 || mv.dim(0) != 1 || mv.dim(1) != 1 || mv.dim(2) != cfg.in_h ||
      mv.dim(3) != cfg.in_w) {
    fail_invalid(strformat("encode: mask %s does not match frame", mv.shape_str().c_str()));
  }
  check_mask_range(mv, "encode");

  EncodeOut out;
  ad::Var x = ad::concat_ch(frame, mask);
  for (int s = 1; s <= 5; ++s) {
    const std::string sp = prefix + ".stage" + std::to_string(s);
    ad::Var main = ad::conv2d(x, p.at(sp + ".conv1.w"), p.at(sp + ".conv1.b"), 2, 1, 1);
    main = ad::relu(main);
    main = ad::conv2d(main, p.at(sp + ".conv2.w"), p.at(sp + ".conv2.b"), 1, 1, 1);
    ad::Var skip = ad::conv2d(x, p.at(sp + ".skip.w"), p.at(sp + ".skip.b"), 2, 0, 0);
    x = ad::relu(ad::add(main, skip));
    out.pyramid.push_back(x);
  }
  out.bottleneck = conv1x1(t, x, p, prefix + ".proj");
  return out;
}

ad::Var encode_reference(ad::Tape& t, ad::Var frame, ad::Var mask,
                         const ParamVars& p, const ModelConfig& cfg) {
  return encode(t, frame, mask, p, cfg, "ref_encoder").bottleneck;
}

RnnVars convlstm_step(ad::Tape& t, ad::Var x, const RnnVars& state, ad::Var w,
                      ad::Var b, CellActivation act) {
  const int d = t.val(x).dim(1);
  const Tensor& wv = t.val(w);
  if (wv.dim(0) != 4 * d || wv.dim(1) != 2 * d) {
    fail_invalid(strformat("convlstm_step: gate kernel %s incompatible with %d channels",
                           wv.shape_str().c_str(), d));
  }
  if (wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0) {
    fail_invalid("convlstm_step: gate kernel must be square and odd");
  }
  check_same_shape(t.val(state.h), t.val(state.c), "convlstm_step state");
  const int pad = (wv.dim(2) - 1) / 2;

  ad::Var gates = ad::conv2d(ad::concat_ch(x, state.h), w, b, 1, pad, pad);
  ad::Var i = ad::sigmoid(ad::slice_ch(gates, 0, d));
  ad::Var f = ad::sigmoid(ad::slice_ch(gates, d, 2 * d));
  ad::Var o = ad::sigmoid(ad::slice_ch(gates, 2 * d, 3 * d));
  ad::Var g_pre = ad::slice_ch(gates, 3 * d, 4 * d);
  ad::Var g = act == CellActivation::kReluStateOnly ? ad::tanh_op(g_pre) : ad::relu(g_pre);
  ad::Var c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
  ad::Var c_out = act == CellActivation::kReluCandidateOnly ? ad::tanh_op(c) : ad::relu(c);
  return {ad::mul(o, c_out), c};
}

ad::Var global_conv(ad::Tape&, ad::Var x, const ParamVars& p,
                    const std::string& prefix, int k) {
  if (k < 1 || k % 2 == 0) fail_invalid("global_conv: kernel must be odd");
  const int half = (k - 1) / 2;
  ad::Var p1 = ad::conv2d(x, p.at(prefix + ".path1.conv1.w"),
                          p.at(prefix + ".path1.conv1.b"), 1, half, 0);
  p1 = ad::conv2d(p1, p.at(prefix + ".path1.conv2.w"),
                  p.at(prefix + ".path1.conv2.b"), 1, 0, half);
  ad::Var p2 = ad::conv2d(x, p.at(prefix + ".path2.conv1.w"),
                          p.at(prefix + ".path2.conv1.b"), 1, 0, half);
  p2 = ad::conv2d(p2, p.at(prefix + ".path2.conv2.w"),
                  p.at(prefix + ".path2.conv2.b"), 1, half, 0);
  return ad::add(p1, p2);
}

ad::Var merge_features(ad::Tape& t, ad::Var h, std::optional<ad::Var> ref0,
                       std::optional<ad::Var> prev, const ParamVars& p,
                       const ModelConfig& cfg) {
  auto need = [&](const std::optional<ad::Var>& v, const char* which) -> ad::Var {
    if (!v.has_value()) {
      fail_invalid(strformat("merge_features: variant %s requires the %s feature",
                             variant_name(cfg.variant), which));
    }
    check_same_shape(t.val(h), t.val(*v), "merge_features");
    return *v;
  };
  switch (cfg.variant) {
    case Variant::kS2SBaseline:
      return h;
    case Variant::kHs2sRef0Only: {
      ad::Var a = global_conv(t, ad::concat_ch(h, need(ref0, "frame-0")), p,
                              "merge.gc_a", cfg.gc_kernel);
      return conv1x1(t, a, p, "merge.fuse");
    }
    case Variant::kHs2sPrevOnly: {
      ad::Var b = global_conv(t, ad::concat_ch(h, need(prev, "previous-frame")), p,
                              "merge.gc_b", cfg.gc_kernel);
      return conv1x1(t, b, p, "merge.fuse");
    }
    case Variant::kHs2sFull: {
      ad::Var a = global_conv(t, ad::concat_ch(h, need(ref0, "frame-0")), p,
                              "merge.gc_a", cfg.gc_kernel);
      ad::Var b = global_conv(t, ad::concat_ch(h, need(prev, "previous-frame")), p,
                              "merge.gc_b", cfg.gc_kernel);
      return conv1x1(t, ad::concat_ch(a, b), p, "merge.fuse");
    }
    case Variant::kHs2sCosine: {
      ad::Var a = ad::concat_ch(h, ad::channel_cosine(h, need(ref0, "frame-0")));
      ad::Var b = ad::concat_ch(h, ad::channel_cosine(h, need(prev, "previous-frame")));
      return conv1x1(t, ad::concat_ch(a, b), p, "merge.fuse");
    }
  }
  fail_invalid("merge_features: unknown variant");
}

DecodeOut decode(ad::Tape& t, ad::Var merged, const std::vector<ad::Var>& pyramid,
                 std::optional<RnnVars>& skip_state, const ParamVars& p,
                 const ModelConfig& cfg) {
  if (pyramid.size() != 5) fail_invalid("decode: expected a 5-level pyramid");
  ad::Var f = merged;
  for (int s = 1; s <= 5; ++s) {
    ad::Var lvl = pyramid[static_cast<size_t>(5 - s)];
    if (s == 5 && cfg.use_skip_rnn) {
      if (!skip_state.has_value()) {
        Tensor zero(t.val(lvl).shape);
        skip_state = RnnVars{t.leaf(zero), t.leaf(zero)};
      }
      *skip_state = convlstm_step(t, lvl, *skip_state, p.at("skip_rnn.gates.w"),
                                  p.at("skip_rnn.gates.b"), cfg.cell_activation);
      // Residual: the raw skip plus a projection of the recurrent state,
      // so zeroed skip-RNN weights reduce to the plain skip.
      lvl = ad::add(lvl, conv1x1(t, skip_state->h, p, "skip_rnn.proj"));
    }
    const std::string sp = "decoder.stage" + std::to_string(s);
    f = ad::add(f, conv1x1(t, lvl, p, sp + ".skip_proj"));
    f = ad::relu(ad::conv2d(ad::upsample2(f), p.at(sp + ".conv.w"),
                            p.at(sp + ".conv.b"), 1, 2, 2));
  }
  DecodeOut out;
  out.fg_prob = ad::sigmoid(conv1x1(t, f, p, "head.fg"));
  out.aux_logits = conv1x1(t, f, p, "head.aux");
  return out;
}

SequenceOutput forward_sequence(ad::Tape& t, const Tensor& frames,
                                const Tensor& first_mask, const ParamVars& p,
                                const ModelConfig& cfg,
                                const std::vector<MaskSource>& mask_feed,
                                const Tensor* gt_masks) {
  cfg.validate();
  if (frames.ndim() != 4 || frames.dim(1) != 3 || frames.dim(2) != cfg.in_h ||
      frames.dim(3) != cfg.in_w) {
    fail_invalid(strformat("forward_sequence: frames %s do not match config %dx%d",
                           frames.shape_str().c_str(), cfg.in_h, cfg.in_w));
  }
  const int T = frames.dim(0);
  if (T < 2) fail_invalid("forward_sequence: need at least 2 frames");
  if (static_cast<int>(mask_feed.size()) != T - 1) {
    fail_invalid(strformat("forward_sequence: mask_feed has %zu entries, need %d",
                           mask_feed.size(), T - 1));
  }
  if (first_mask.ndim() != 3 || first_mask.dim(0) != 1 ||
      first_mask.dim(1) != cfg.in_h || first_mask.dim(2) != cfg.in_w) {
    fail_invalid(strformat("forward_sequence: first_mask %s does not match frames",
                           first_mask.shape_str().c_str()));
  }
  bool needs_gt = false;
  for (size_t i = 1; i < mask_feed.size(); ++i) {
    needs_gt |= mask_feed[i] == MaskSource::kGroundTruth;
  }
  if (needs_gt && gt_masks == nullptr) {
    fail_invalid("forward_sequence: mask_feed requests ground truth but gt_masks is null");
  }
  if (gt_masks != nullptr &&
      (gt_masks->ndim() != 4 || gt_masks->dim(0) != T || gt_masks->dim(1) != 1 ||
       gt_masks->dim(2) != cfg.in_h || gt_masks->dim(3) != cfg.in_w)) {
    fail_invalid(strformat("forward_sequence: gt_masks %s do not match frames",
                           gt_masks->shape_str().c_str()));
  }

  const int64_t frame_sz = static_cast<int64_t>(3) * cfg.in_h * cfg.in_w;
  const int64_t mask_sz = static_cast<int64_t>(cfg.in_h) * cfg.in_w;
  auto frame_at = [&](int idx) {
    Tensor f({1, 3, cfg.in_h, cfg.in_w});
    std::memcpy(f.data(), frames.data() + idx * frame_sz, sizeof(double) * frame_sz);
    return t.leaf(std::move(f));
  };
  auto gt_mask_at = [&](int idx) {
    Tensor m({1, 1, cfg.in_h, cfg.in_w});
    std::memcpy(m.data(), gt_masks->data() + idx * mask_sz, sizeof(double) * mask_sz);
    return t.leaf(std::move(m));
  };

  Tensor m0_t({1, 1, cfg.in_h, cfg.in_w});
  std::copy(first_mask.v.begin(), first_mask.v.end(), m0_t.v.begin());
  ad::Var m0 = t.leaf(std::move(m0_t));
  ad::Var frame0 = frame_at(0);
  ad::Var xref0 = encode_reference(t, frame0, m0, p, cfg);

  const bool baseline = cfg.variant == Variant::kS2SBaseline;
  const bool need_ref0 = cfg.variant == Variant::kHs2sRef0Only ||
                         cfg.variant == Variant::kHs2sFull ||
                         cfg.variant == Variant::kHs2sCosine;
  const bool need_prev = cfg.variant == Variant::kHs2sPrevOnly ||
                         cfg.variant == Variant::kHs2sFull ||
                         cfg.variant == Variant::kHs2sCosine;

  RnnVars state;
  if (baseline) {
    // Learned initial state from the reference pathway.
    state.h = ad::relu(conv1x1(t, xref0, p, "init.h"));
    state.c = conv1x1(t, xref0, p, "init.c");
  } else {
    Tensor zero({1, cfg.bottleneck_channels, cfg.in_h / 32, cfg.in_w / 32});
    state = RnnVars{t.leaf(zero), t.leaf(zero)};
  }

  std::optional<RnnVars> skip_state;
  SequenceOutput out;
  ad::Var m_prev = m0;
  ad::Var x_prev = xref0;  // reference feature of frame t-1; frame 0 initially
  for (int step = 1; step < T; ++step) {
    if (step >= 2) {
      m_prev = mask_feed[static_cast<size_t>(step - 1)] == MaskSource::kGroundTruth
                   ? gt_mask_at(step - 1)
                   : out.fg_probs.back();
      if (need_prev) {
        x_prev = encode_reference(t, frame_at(step - 1), m_prev, p, cfg);
      }
    }
    EncodeOut enc = encode(t, frame_at(step), m_prev, p, cfg, "encoder");
    state = convlstm_step(t, enc.bottleneck, state, p.at("rnn.gates.w"),
                          p.at("rnn.gates.b"), cfg.cell_activation);
    ad::Var merged =
        baseline ? state.h
                 : merge_features(t, state.h,
                                  need_ref0 ? std::optional<ad::Var>(xref0) : std::nullopt,
                                  need_prev ? std::optional<ad::Var>(x_prev) : std::nullopt,
                                  p, cfg);
    DecodeOut dec = decode(t, merged, enc.pyramid, skip_state, p, cfg);
    out.fg_probs.push_back(dec.fg_prob);
    out.aux_logits.push_back(dec.aux_logits);
  }
  return out;
}

}  // namespace hs2s::model
