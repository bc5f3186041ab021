#include "maaf/image_cache.hpp"

#include <filesystem>

namespace maaf {

const ImageTensor ImageCache::get(const std::string& rel_path) {
  auto it = cache_.find(rel_path);
  if (it == cache_.end()) {
    const std::string full =
        (std::filesystem::path(root_) / rel_path).string();
    ImageTensor img = read_ppm(full);
    Raw raw;
    raw.h = img.height;
    raw.w = img.width;
    raw.rgb.resize(3 * img.height * img.width);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          raw.rgb[(y * img.width + x) * 3 + c] = static_cast<std::uint8_t>(
              img.at(c, y, x) * real(255) + real(0.5));
    it = cache_.emplace(rel_path, std::move(raw)).first;
  }
  const Raw& raw = it->second;
  ImageTensor img = image_zeros(raw.h, raw.w);
  for (std::size_t y = 0; y < raw.h; ++y)
    for (std::size_t x = 0; x < raw.w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = real(raw.rgb[(y * raw.w + x) * 3 + c]) / real(255);
  return img;
}

}  // namespace maaf
