#include "maaf/pooling.hpp"

#include <cmath>

namespace maaf {

Tensor pool(const TokenSequence& tokens, const PoolingConfig& cfg,
            const Tensor& scale) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (TokenGroup g :
       {TokenGroup::CoarseImage, TokenGroup::FineImage, TokenGroup::Text}) {
    if (g == TokenGroup::Text && !cfg.it) continue;
    auto [start, len] = tokens.range(g);
    if (len > 0) ranges.emplace_back(start, len);
  }
  if (ranges.empty()) throw Error("pool: zero included tokens");

  Tensor pooled;
  if (cfg.rp) {
    std::vector<Tensor> group_means;
    for (auto [start, len] : ranges)
      group_means.push_back(mean_rows(slice_rows(tokens.tokens, start, len)));
    pooled = group_means.size() == 1 ? group_means[0]
                                     : mean_rows(concat_rows(group_means));
  } else {
    std::vector<Tensor> parts;
    for (auto [start, len] : ranges)
      parts.push_back(slice_rows(tokens.tokens, start, len));
    pooled = mean_rows(parts.size() == 1 ? parts[0] : concat_rows(parts));
  }
  return scale_by(l2_normalize_rows(pooled), scale);
}

real similarity(const Tensor& a, const Tensor& b) {
  if (a->size() != b->size()) {
    throw Error("similarity: dimension mismatch " + shape_str(a->shape) +
                " vs " + shape_str(b->shape));
  }
  real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a->size(); ++i) {
    dot += a->values[i] * b->values[i];
    na += a->values[i] * a->values[i];
    nb += b->values[i] * b->values[i];
  }
  if (na == real(0) || nb == real(0)) {
    throw Error("similarity: zero vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace maaf
