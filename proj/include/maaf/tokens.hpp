#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "maaf/tensor.hpp"

namespace maaf {

enum class TokenGroup { CoarseImage, FineImage, Text };

// Ordered token sequence with per-token group tags. Image tokens also
// carry their original (row, col) in the source feature grid; text tokens
// carry (-1, word_index). Groups are contiguous in the canonical order
// coarse, fine, text.
struct TokenSequence {
  Tensor tokens;  // [n, d]
  std::vector<TokenGroup> groups;
  std::vector<std::pair<int, int>> positions;

  std::size_t length() const { return groups.size(); }
  std::size_t dim() const { return tokens ? tokens->shape[1] : 0; }

  std::size_t count(TokenGroup g) const {
    std::size_t c = 0;
    for (auto t : groups)
      if (t == g) ++c;
    return c;
  }

  // [start, len) of a contiguous group; len 0 if absent
  std::pair<std::size_t, std::size_t> range(TokenGroup g) const {
    std::size_t start = 0, len = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i] == g) {
        if (len == 0) start = i;
        ++len;
      }
    }
    return {start, len};
  }
};

}  // namespace maaf
