#include "maaf/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace maaf {

namespace {

int read_pnm_int(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    } else {
      c = in.get();
    }
  }
  if (c == EOF) throw Error("pnm: unexpected end of header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}

std::uint8_t quantize(real v) {
  real s = v * real(255) + real(0.5);
  if (s < 0) s = 0;
  if (s > 255) s = 255;
  return static_cast<std::uint8_t>(s);
}

}  // namespace

ImageTensor image_zeros(std::size_t height, std::size_t width) {
  ImageTensor img;
  img.height = height;
  img.width = width;
  img.values.assign(3 * height * width, real(0));
  return img;
}

ImageTensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw Error("read_ppm: not a P6 file: " + path);
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) {
    throw Error("read_ppm: maxval must be 255 in " + path);
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(3) * w * h);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw Error("read_ppm: truncated pixel data in " + path);
  }
  ImageTensor img = image_zeros(h, w);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = real(raw[(y * w + x) * 3 + c]) / real(255);
  return img;
}

void write_ppm(const ImageTensor& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        raw[(y * img.width + x) * 3 + c] = quantize(img.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error("write_ppm: write failed for " + path);
}

namespace {

// min-max normalization over vals, constant input -> 128
std::vector<std::uint8_t> normalize_bytes(const std::vector<real>& vals) {
  real lo = vals[0], hi = vals[0];
  for (real v : vals) {
    if (!std::isfinite(v)) throw Error("write_image: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::uint8_t> out(vals.size());
  if (hi == lo) {
    std::fill(out.begin(), out.end(), std::uint8_t(128));
    return out;
  }
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const real s = (vals[i] - lo) / (hi - lo) * real(255) + real(0.5);
    out[i] = static_cast<std::uint8_t>(std::min(real(255), std::max(real(0), s)));
  }
  return out;
}

}  // namespace

void write_pgm_normalized(const std::vector<real>& grid, std::size_t h,
                          std::size_t w, const std::string& path) {
  if (grid.size() != h * w) {
    throw Error("write_pgm_normalized: grid size mismatch");
  }
  auto bytes = normalize_bytes(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_pgm_normalized: cannot open " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write_pgm_normalized: write failed for " + path);
}

void write_ppm_normalized(const ImageTensor& img, const std::string& path) {
  auto bytes = normalize_bytes(img.values);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_ppm_normalized: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        raw[(y * img.width + x) * 3 + c] =
            bytes[(c * img.height + y) * img.width + x];
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error("write_ppm_normalized: write failed for " + path);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace maaf
