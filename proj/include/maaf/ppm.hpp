#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maaf/tensor.hpp"

namespace maaf {

// Raster image, 3 channels, values in [0,1], stored channel-major [3,H,W].
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<real> values;

  real& at(std::size_t c, std::size_t y, std::size_t x) {
    return values[(c * height + y) * width + x];
  }
  real at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
};

ImageTensor image_zeros(std::size_t height, std::size_t width);

// Binary PPM (P6, maxval 255); bytes scaled to [0,1] on read.
ImageTensor read_ppm(const std::string& path);
void write_ppm(const ImageTensor& img, const std::string& path);

// Grayscale grid as binary PGM (P5), min-max normalized to [0,255];
// a constant grid maps to 128.
void write_pgm_normalized(const std::vector<real>& grid, std::size_t h,
                          std::size_t w, const std::string& path);
// Color image, same normalization (joint over all channels).
void write_ppm_normalized(const ImageTensor& img, const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace maaf
