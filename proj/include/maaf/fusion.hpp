#pragma once

#include <utility>
#include <vector>

#include "maaf/params.hpp"
#include "maaf/tokens.hpp"

namespace maaf {

// transform applied to the raw score matrix QK^T
enum class FKind { Softmax, Identity };

enum class FusionVariant {
  MaafSelf,       // Self(phi) over the concatenated sequence
  CrossXt,        // Cross(x,t)
  SelfThenCross,  // Self(x), Cross(x,t)
  ParallelCross,  // Cross(x,t) || Cross(t,x)
  Table4Row4,     // Self(x)||Self(t), Cross(x,t), Cross(t,x)
  Table4Row5,     // Self(x)||Self(t), Cross(t,x), Cross(x,t)
  Table4Row6,     // Self(x)||Self(t), Cross(x,t)||Cross(t,x)
};

FKind fkind_from_string(const std::string& s);
std::string to_string(FKind f);
FusionVariant fusion_variant_from_string(const std::string& s);
std::string to_string(FusionVariant v);

struct FusionConfig {
  FusionVariant variant = FusionVariant::MaafSelf;
  FKind f = FKind::Softmax;
  int num_blocks = 2;
  int heads = 8;
  int d = 64;
  int ffn_width = 256;
  bool positional_encoding = false;
  real dropout = real(0.1);
  // 1/sqrt(d/h) score scaling; disable for literal f(QK^T) mode
  bool scale_scores = true;
  // Post-LN residual blocks; disable for the raw-equation oracle mode
  bool layer_norm = true;
};

// One shared parameter set serves all token groups within a sublayer.
// Heads are column slices of the d x d matrices.
struct AttnParams {
  Tensor wq, wk, wv, wo;
};

struct LnParams {
  Tensor gain, bias;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;  // d -> ffn_width -> d with relu
};

struct SublayerParams {
  AttnParams attn;
  LnParams ln;
};

struct OneStreamBlockParams {
  SublayerParams attn;
  FfnParams ffn;
  LnParams ln_ffn;
};

enum class SubOp { SelfX, SelfY, CrossXT, CrossTX };

// Sub-ops grouped into stages; ops within a stage read the stream values
// at stage entry (parallel branches do not see each other's outputs).
struct TwoStreamBlockParams {
  std::vector<std::vector<std::pair<SubOp, SublayerParams>>> stages;
  FfnParams ffn_x, ffn_y;
  LnParams ln_ffn_x, ln_ffn_y;
  bool y_touched = false;  // whether any sub-op updates the text stream
};

struct FusionParams {
  std::vector<OneStreamBlockParams> one;
  std::vector<TwoStreamBlockParams> two;
};

// Captured per-head weight matrices f(QK^T), in forward call order.
struct HeadWeights {
  std::size_t nq = 0, nk = 0;
  std::vector<std::vector<real>> heads;  // heads[h] is nq*nk row-major
};

struct AttentionCapture {
  std::vector<HeadWeights> records;
};

struct FusionCtx {
  Rng* rng = nullptr;
  bool training = false;
  AttentionCapture* capture = nullptr;
};

FusionParams make_fusion(ParamStore& store, const FusionConfig& cfg, Rng& rng);

// Scaled dot-product multi-head attention, Attn(Q,K,V) = f(QK^T)V, with a
// learned output projection. Writes per-head weights into capture if set.
Tensor multi_head_attention(FKind f, const Tensor& q_src,
                            const Tensor& kv_src, const AttnParams& p,
                            int heads, bool scale_scores,
                            AttentionCapture* capture);

// One transformer-style encoder block over the concatenated sequence:
// LN(x + Attn(x)) then LN(+FFN). Group tags pass through unchanged.
TokenSequence maaf_block(const TokenSequence& phi,
                         const OneStreamBlockParams& p,
                         const FusionConfig& cfg, FusionCtx& ctx);

std::pair<TokenSequence, TokenSequence> two_stream_block(
    const TokenSequence& x, const TokenSequence& y,
    const TwoStreamBlockParams& p, const FusionConfig& cfg, FusionCtx& ctx);

// Standard sinusoids added by flat sequence position (when enabled).
TokenSequence add_positional_encoding(const TokenSequence& seq);
std::vector<real> positional_encoding_row(std::size_t pos, std::size_t d);

TokenSequence concat_sequences(const TokenSequence& a,
                               const TokenSequence& b);

// Full fusion pipeline for any variant; output carries all tokens
// (image stream first, then text) so pooling applies uniformly.
TokenSequence fuse(const TokenSequence& image_tokens,
                   const TokenSequence& text_tokens, const FusionParams& p,
                   const FusionConfig& cfg, FusionCtx& ctx);

}  // namespace maaf
