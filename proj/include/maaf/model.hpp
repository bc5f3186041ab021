#pragma once

#include "maaf/fusion.hpp"
#include "maaf/image_encoder.hpp"
#include "maaf/pooling.hpp"
#include "maaf/text_encoder.hpp"

namespace maaf {

struct ModelConfig {
  FusionConfig fusion;
  PoolingConfig pooling;
  TextVariant text_variant = TextVariant::Lstm;
  bool use_fine_tokens = true;
  int image_size = 64;  // multiple of 16
};

struct Model {
  ModelConfig cfg;
  Vocabulary vocab;
  ParamStore params;
  ImageEncoderParams image_enc;
  TextEncoderParams text_enc;
  // transformer1 text variant: one softmax self-attention block over the
  // word embeddings, with its own parameters
  OneStreamBlockParams text_block;
  bool has_text_block = false;
  Tensor scale;  // learned scalar s

  std::size_t parameter_count() const { return params.total_parameters(); }
  FusionParams fusion;
};

Model build_model(const ModelConfig& cfg, const Vocabulary& vocab, Rng& rng);

// Optional forward trace for the visualization pipeline; capture goes in
// FusionCtx, the fused sequence (token layout) lands here.
struct QueryTrace {
  TokenSequence fused;
  std::size_t coarse_h = 0, coarse_w = 0, fine_h = 0, fine_w = 0;
};

// encode_image -> flatten -> encode_text -> fuse -> pool
Tensor embed_query(Model& m, const Tensor& image,
                   const TokenizedCaption& caption, FusionCtx& ctx,
                   QueryTrace* trace = nullptr);
Tensor embed_query(Model& m, const ImageTensor& image,
                   const TokenizedCaption& caption, FusionCtx& ctx,
                   QueryTrace* trace = nullptr);

// ita=true: image tokens pass through attention with the null caption;
// ita=false: pooled projected image tokens directly, bypassing attention.
Tensor embed_catalog_image(Model& m, const Tensor& image, FusionCtx& ctx);
Tensor embed_catalog_image(Model& m, const ImageTensor& image,
                           FusionCtx& ctx);

}  // namespace maaf
