#pragma once

#include "maaf/tokens.hpp"

namespace maaf {

// RP = resolution-wise pooling, ITA = image through attention,
// IT = include text tokens in the pooled embedding.
struct PoolingConfig {
  bool rp = true;
  bool ita = true;
  bool it = true;
};

// Collapses a fused token sequence into one embedding of norm s.
// With rp: mean within each present group, then mean of the group means.
// Without rp: a single mean over all included tokens. Text tokens are
// included only when `it` and text is present. Result is L2-normalized
// and multiplied by the learned scale s.
Tensor pool(const TokenSequence& tokens, const PoolingConfig& cfg,
            const Tensor& scale);

// cosine of the underlying vectors; both args are [1,d]
real similarity(const Tensor& a, const Tensor& b);

}  // namespace maaf
