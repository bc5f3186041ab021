#include "maaf/model.hpp"

namespace maaf {

Model build_model(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  if (cfg.image_size % 16 != 0) {
    throw Error("model: image_size must be a multiple of 16");
  }
  Model m;
  m.cfg = cfg;
  m.vocab = vocab;
  m.image_enc = make_image_encoder(m.params, cfg.fusion.d, rng);
  m.text_enc = make_text_encoder(m.params, cfg.fusion.d, vocab.size(),
                                 cfg.text_variant, rng);
  if (cfg.text_variant == TextVariant::Transformer1) {
    m.has_text_block = true;
    OneStreamBlockParams bp;
    bp.attn.attn = [&] {
      AttnParams a;
      const auto dd = static_cast<std::size_t>(cfg.fusion.d);
      a.wq = m.params.create("text_block/wq", {dd, dd}, ParamGroup::Other, rng);
      a.wk = m.params.create("text_block/wk", {dd, dd}, ParamGroup::Other, rng);
      a.wv = m.params.create("text_block/wv", {dd, dd}, ParamGroup::Other, rng);
      a.wo = m.params.create("text_block/wo", {dd, dd}, ParamGroup::Other, rng);
      return a;
    }();
    const auto dd = static_cast<std::size_t>(cfg.fusion.d);
    bp.attn.ln.gain = m.params.create_const("text_block/ln1/gain", {dd},
                                            real(1), ParamGroup::Other);
    bp.attn.ln.bias = m.params.create_const("text_block/ln1/bias", {dd},
                                            real(0), ParamGroup::Other);
    const auto ww = static_cast<std::size_t>(cfg.fusion.ffn_width);
    bp.ffn.w1 = m.params.create("text_block/ffn/w1", {dd, ww},
                                ParamGroup::Other, rng);
    bp.ffn.b1 = m.params.create_const("text_block/ffn/b1", {ww}, real(0),
                                      ParamGroup::Other);
    bp.ffn.w2 = m.params.create("text_block/ffn/w2", {ww, dd},
                                ParamGroup::Other, rng);
    bp.ffn.b2 = m.params.create_const("text_block/ffn/b2", {dd}, real(0),
                                      ParamGroup::Other);
    bp.ln_ffn.gain = m.params.create_const("text_block/ln2/gain", {dd},
                                           real(1), ParamGroup::Other);
    bp.ln_ffn.bias = m.params.create_const("text_block/ln2/bias", {dd},
                                           real(0), ParamGroup::Other);
    m.text_block = std::move(bp);
  }
  m.fusion = make_fusion(m.params, cfg.fusion, rng);
  // learned scale s, initialized to 4, shared by query and catalog towers
  m.scale = m.params.create_const("scale", {1}, real(4), ParamGroup::Other);
  return m;
}

namespace {

TokenSequence image_tokens_of(Model& m, const Tensor& image) {
  FeatureMapPair fm = encode_image(image, m.image_enc);
  return flatten_tokens(fm, m.cfg.use_fine_tokens);
}

TokenSequence text_tokens_of(Model& m, const TokenizedCaption& caption,
                             FusionCtx& ctx, bool allow_empty) {
  TokenSequence text = encode_text(caption, m.text_enc, allow_empty);
  if (m.has_text_block && text.length() > 0) {
    FusionConfig tcfg = m.cfg.fusion;
    tcfg.f = FKind::Softmax;
    FusionCtx tctx = ctx;
    tctx.capture = nullptr;  // capture is for the fusion blocks only
    text = maaf_block(text, m.text_block, tcfg, tctx);
  }
  return text;
}

void fill_trace(const Tensor& image, const TokenSequence& fused,
                QueryTrace* trace) {
  if (trace == nullptr) return;
  trace->fused = fused;
  const std::size_t h = image->shape[1], w = image->shape[2];
  trace->coarse_h = h / 16;
  trace->coarse_w = w / 16;
  trace->fine_h = h / 8;
  trace->fine_w = w / 8;
}

}  // namespace

Tensor embed_query(Model& m, const Tensor& image,
                   const TokenizedCaption& caption, FusionCtx& ctx,
                   QueryTrace* trace) {
  TokenSequence img = image_tokens_of(m, image);
  TokenSequence text = text_tokens_of(m, caption, ctx, false);
  TokenSequence fused = fuse(img, text, m.fusion, m.cfg.fusion, ctx);
  fill_trace(image, fused, trace);
  return pool(fused, m.cfg.pooling, m.scale);
}

Tensor embed_query(Model& m, const ImageTensor& image,
                   const TokenizedCaption& caption, FusionCtx& ctx,
                   QueryTrace* trace) {
  return embed_query(m, image_to_tensor(image), caption, ctx, trace);
}

Tensor embed_catalog_image(Model& m, const Tensor& image, FusionCtx& ctx) {
  TokenSequence img = image_tokens_of(m, image);
  if (m.cfg.pooling.ita) {
    TokenSequence null_text;
    null_text.tokens = zeros({0, static_cast<std::size_t>(m.cfg.fusion.d)});
    TokenSequence fused = fuse(img, null_text, m.fusion, m.cfg.fusion, ctx);
    return pool(fused, m.cfg.pooling, m.scale);
  }
  return pool(img, m.cfg.pooling, m.scale);
}

Tensor embed_catalog_image(Model& m, const ImageTensor& image,
                           FusionCtx& ctx) {
  return embed_catalog_image(m, image_to_tensor(image), ctx);
}

}  // namespace maaf
