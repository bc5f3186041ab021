#include "maaf/fusion.hpp"

#include <cmath>

namespace maaf {

FKind fkind_from_string(const std::string& s) {
  if (s == "softmax") return FKind::Softmax;
  if (s == "identity") return FKind::Identity;
  throw Error("unknown attention transform: " + s);
}

std::string to_string(FKind f) {
  return f == FKind::Softmax ? "softmax" : "identity";
}

FusionVariant fusion_variant_from_string(const std::string& s) {
  if (s == "maaf_self") return FusionVariant::MaafSelf;
  if (s == "cross_xt") return FusionVariant::CrossXt;
  if (s == "self_then_cross") return FusionVariant::SelfThenCross;
  if (s == "parallel_cross") return FusionVariant::ParallelCross;
  if (s == "table4_row4") return FusionVariant::Table4Row4;
  if (s == "table4_row5") return FusionVariant::Table4Row5;
  if (s == "table4_row6") return FusionVariant::Table4Row6;
  throw Error("unknown fusion variant: " + s);
}

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::MaafSelf: return "maaf_self";
    case FusionVariant::CrossXt: return "cross_xt";
    case FusionVariant::SelfThenCross: return "self_then_cross";
    case FusionVariant::ParallelCross: return "parallel_cross";
    case FusionVariant::Table4Row4: return "table4_row4";
    case FusionVariant::Table4Row5: return "table4_row5";
    case FusionVariant::Table4Row6: return "table4_row6";
  }
  throw Error("bad fusion variant");
}

namespace {

std::string subop_name(SubOp s) {
  switch (s) {
    case SubOp::SelfX: return "self_x";
    case SubOp::SelfY: return "self_y";
    case SubOp::CrossXT: return "cross_xt";
    case SubOp::CrossTX: return "cross_tx";
  }
  throw Error("bad sub-op");
}

std::vector<std::vector<SubOp>> variant_stages(FusionVariant v) {
  using S = SubOp;
  switch (v) {
    case FusionVariant::CrossXt: return {{S::CrossXT}};
    case FusionVariant::SelfThenCross: return {{S::SelfX}, {S::CrossXT}};
    case FusionVariant::ParallelCross: return {{S::CrossXT, S::CrossTX}};
    case FusionVariant::Table4Row4:
      return {{S::SelfX, S::SelfY}, {S::CrossXT}, {S::CrossTX}};
    case FusionVariant::Table4Row5:
      return {{S::SelfX, S::SelfY}, {S::CrossTX}, {S::CrossXT}};
    case FusionVariant::Table4Row6:
      return {{S::SelfX, S::SelfY}, {S::CrossXT, S::CrossTX}};
    case FusionVariant::MaafSelf:
      throw Error("maaf_self is not a two-stream variant");
  }
  throw Error("bad fusion variant");
}

AttnParams make_attn(ParamStore& store, const std::string& prefix, int d,
                     Rng& rng) {
  const auto dd = static_cast<std::size_t>(d);
  AttnParams p;
  p.wq = store.create(prefix + "/wq", {dd, dd}, ParamGroup::Other, rng);
  p.wk = store.create(prefix + "/wk", {dd, dd}, ParamGroup::Other, rng);
  p.wv = store.create(prefix + "/wv", {dd, dd}, ParamGroup::Other, rng);
  p.wo = store.create(prefix + "/wo", {dd, dd}, ParamGroup::Other, rng);
  return p;
}

LnParams make_ln(ParamStore& store, const std::string& prefix, int d) {
  const auto dd = static_cast<std::size_t>(d);
  LnParams p;
  p.gain = store.create_const(prefix + "/gain", {dd}, real(1),
                              ParamGroup::Other);
  p.bias = store.create_const(prefix + "/bias", {dd}, real(0),
                              ParamGroup::Other);
  return p;
}

FfnParams make_ffn(ParamStore& store, const std::string& prefix, int d,
                   int width, Rng& rng) {
  const auto dd = static_cast<std::size_t>(d);
  const auto ww = static_cast<std::size_t>(width);
  FfnParams p;
  p.w1 = store.create(prefix + "/w1", {dd, ww}, ParamGroup::Other, rng);
  p.b1 = store.create_const(prefix + "/b1", {ww}, real(0), ParamGroup::Other);
  p.w2 = store.create(prefix + "/w2", {ww, dd}, ParamGroup::Other, rng);
  p.b2 = store.create_const(prefix + "/b2", {dd}, real(0), ParamGroup::Other);
  return p;
}

Tensor apply_ffn(const Tensor& x, const FfnParams& p, const FusionConfig& cfg,
                 FusionCtx& ctx) {
  Tensor h = relu(add_bias(matmul(x, p.w1), p.b1));
  Tensor o = add_bias(matmul(h, p.w2), p.b2);
  if (ctx.rng != nullptr) o = dropout(o, cfg.dropout, *ctx.rng, ctx.training);
  return o;
}

Tensor residual_norm(const Tensor& x, const Tensor& delta,
                     const LnParams& ln, const FusionConfig& cfg) {
  Tensor r = add(x, delta);
  return cfg.layer_norm ? layer_norm(r, ln.gain, ln.bias) : r;
}

}  // namespace

FusionParams make_fusion(ParamStore& store, const FusionConfig& cfg,
                         Rng& rng) {
  if (cfg.d % cfg.heads != 0) {
    throw Error("fusion: d=" + std::to_string(cfg.d) +
                " not divisible by heads=" + std::to_string(cfg.heads));
  }
  FusionParams params;
  if (cfg.variant == FusionVariant::MaafSelf) {
    for (int b = 0; b < cfg.num_blocks; ++b) {
      const std::string prefix = "fusion/block" + std::to_string(b);
      OneStreamBlockParams bp;
      bp.attn.attn = make_attn(store, prefix + "/attn", cfg.d, rng);
      bp.attn.ln = make_ln(store, prefix + "/ln1", cfg.d);
      bp.ffn = make_ffn(store, prefix + "/ffn", cfg.d, cfg.ffn_width, rng);
      bp.ln_ffn = make_ln(store, prefix + "/ln2", cfg.d);
      params.one.push_back(std::move(bp));
    }
    return params;
  }
  const auto stages = variant_stages(cfg.variant);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string prefix = "fusion/block" + std::to_string(b);
    TwoStreamBlockParams bp;
    for (std::size_t si = 0; si < stages.size(); ++si) {
      std::vector<std::pair<SubOp, SublayerParams>> stage;
      for (SubOp op : stages[si]) {
        // an additional learnable parameter set per sub-operation
        const std::string sp = prefix + "/" + subop_name(op);
        SublayerParams sub;
        sub.attn = make_attn(store, sp, cfg.d, rng);
        sub.ln = make_ln(store, sp + "/ln", cfg.d);
        stage.emplace_back(op, std::move(sub));
        if (op == SubOp::SelfY || op == SubOp::CrossTX) bp.y_touched = true;
      }
      bp.stages.push_back(std::move(stage));
    }
    bp.ffn_x = make_ffn(store, prefix + "/ffn_x", cfg.d, cfg.ffn_width, rng);
    bp.ln_ffn_x = make_ln(store, prefix + "/ln_ffn_x", cfg.d);
    if (bp.y_touched) {
      bp.ffn_y = make_ffn(store, prefix + "/ffn_y", cfg.d, cfg.ffn_width, rng);
      bp.ln_ffn_y = make_ln(store, prefix + "/ln_ffn_y", cfg.d);
    }
    params.two.push_back(std::move(bp));
  }
  return params;
}

Tensor multi_head_attention(FKind f, const Tensor& q_src,
                            const Tensor& kv_src, const AttnParams& p,
                            int heads, bool scale_scores,
                            AttentionCapture* capture) {
  if (kv_src->shape[0] == 0) {
    throw Error("attention over empty key set");
  }
  const std::size_t d = q_src->shape[1];
  const std::size_t hd = d / heads;
  Tensor q = matmul(q_src, p.wq);
  Tensor k = matmul(kv_src, p.wk);
  Tensor v = matmul(kv_src, p.wv);
  const real scale =
      scale_scores ? real(1) / std::sqrt(static_cast<real>(hd)) : real(1);
  std::vector<Tensor> head_outs;
  HeadWeights hw;
  hw.nq = q_src->shape[0];
  hw.nk = kv_src->shape[0];
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, hd);
    Tensor kh = slice_cols(k, h * hd, hd);
    Tensor vh = slice_cols(v, h * hd, hd);
    Tensor scores = matmul(qh, kh, false, true);
    if (scale != real(1)) scores = scale_const(scores, scale);
    Tensor weights = f == FKind::Softmax ? softmax_rows(scores) : scores;
    if (capture != nullptr) hw.heads.push_back(weights->values);
    head_outs.push_back(matmul(weights, vh));
  }
  if (capture != nullptr) capture->records.push_back(std::move(hw));
  Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return matmul(merged, p.wo);
}

TokenSequence maaf_block(const TokenSequence& phi,
                         const OneStreamBlockParams& p,
                         const FusionConfig& cfg, FusionCtx& ctx) {
  Tensor a = multi_head_attention(cfg.f, phi.tokens, phi.tokens, p.attn.attn,
                                  cfg.heads, cfg.scale_scores, ctx.capture);
  if (ctx.rng != nullptr) a = dropout(a, cfg.dropout, *ctx.rng, ctx.training);
  Tensor mid = residual_norm(phi.tokens, a, p.attn.ln, cfg);
  Tensor out = residual_norm(mid, apply_ffn(mid, p.ffn, cfg, ctx), p.ln_ffn,
                             cfg);
  TokenSequence res = phi;
  res.tokens = out;
  return res;
}

std::pair<TokenSequence, TokenSequence> two_stream_block(
    const TokenSequence& x, const TokenSequence& y,
    const TwoStreamBlockParams& p, const FusionConfig& cfg, FusionCtx& ctx) {
  Tensor xs = x.tokens;
  Tensor ys = y.tokens;
  for (const auto& stage : p.stages) {
    // parallel branches consume the stage-entry values
    const Tensor x_in = xs;
    const Tensor y_in = ys;
    for (const auto& [op, sub] : stage) {
      Tensor q, kv;
      switch (op) {
        case SubOp::SelfX: q = kv = x_in; break;
        case SubOp::SelfY: q = kv = y_in; break;
        case SubOp::CrossXT: q = x_in; kv = y_in; break;
        case SubOp::CrossTX: q = y_in; kv = x_in; break;
      }
      Tensor a = multi_head_attention(cfg.f, q, kv, sub.attn, cfg.heads,
                                      cfg.scale_scores, ctx.capture);
      if (ctx.rng != nullptr)
        a = dropout(a, cfg.dropout, *ctx.rng, ctx.training);
      Tensor updated = residual_norm(q, a, sub.ln, cfg);
      if (op == SubOp::SelfX || op == SubOp::CrossXT)
        xs = updated;
      else
        ys = updated;
    }
  }
  xs = residual_norm(xs, apply_ffn(xs, p.ffn_x, cfg, ctx), p.ln_ffn_x, cfg);
  if (p.y_touched && ys->shape[0] > 0)
    ys = residual_norm(ys, apply_ffn(ys, p.ffn_y, cfg, ctx), p.ln_ffn_y, cfg);
  TokenSequence rx = x;
  rx.tokens = xs;
  TokenSequence ry = y;
  ry.tokens = ys;
  return {rx, ry};
}

std::vector<real> positional_encoding_row(std::size_t pos, std::size_t d) {
  std::vector<real> row(d);
  for (std::size_t i = 0; 2 * i < d; ++i) {
    const double rate =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(pos) * rate;
    row[2 * i] = static_cast<real>(std::sin(angle));
    if (2 * i + 1 < d) row[2 * i + 1] = static_cast<real>(std::cos(angle));
  }
  return row;
}

TokenSequence add_positional_encoding(const TokenSequence& seq) {
  const std::size_t n = seq.length();
  const std::size_t d = seq.dim();
  std::vector<real> pe(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    auto row = positional_encoding_row(p, d);
    std::copy(row.begin(), row.end(), pe.begin() + p * d);
  }
  TokenSequence out = seq;
  out.tokens = add(seq.tokens, tensor({n, d}, std::move(pe)));
  return out;
}

TokenSequence concat_sequences(const TokenSequence& a,
                               const TokenSequence& b) {
  TokenSequence out;
  if (a.length() == 0) return b;
  if (b.length() == 0) return a;
  out.tokens = concat_rows({a.tokens, b.tokens});
  out.groups = a.groups;
  out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
  out.positions = a.positions;
  out.positions.insert(out.positions.end(), b.positions.begin(),
                       b.positions.end());
  return out;
}

TokenSequence fuse(const TokenSequence& image_tokens,
                   const TokenSequence& text_tokens, const FusionParams& p,
                   const FusionConfig& cfg, FusionCtx& ctx) {
  if (cfg.variant == FusionVariant::MaafSelf) {
    TokenSequence phi = concat_sequences(image_tokens, text_tokens);
    if (cfg.positional_encoding) phi = add_positional_encoding(phi);
    for (const auto& bp : p.one) phi = maaf_block(phi, bp, cfg, ctx);
    return phi;
  }
  TokenSequence x = image_tokens;
  TokenSequence y = text_tokens;
  if (cfg.positional_encoding) {
    x = add_positional_encoding(x);
    if (y.length() > 0) y = add_positional_encoding(y);
  }
  for (const auto& bp : p.two) {
    auto [nx, ny] = two_stream_block(x, y, bp, cfg, ctx);
    x = nx;
    y = ny;
  }
  return concat_sequences(x, y);
}

}  // namespace maaf
