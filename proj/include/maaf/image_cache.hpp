#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "maaf/ppm.hpp"

namespace maaf {

// Decoded images kept as raw bytes (cheap); converted to real on use.
class ImageCache {
 public:
  explicit ImageCache(std::string root) : root_(std::move(root)) {}

  const ImageTensor get(const std::string& rel_path);

 private:
  struct Raw {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major
  };
  std::string root_;
  std::unordered_map<std::string, Raw> cache_;
};

}  // namespace maaf
