#pragma once

#include "maaf/params.hpp"
#include "maaf/ppm.hpp"
#include "maaf/tokens.hpp"

namespace maaf {

// Small trainable conv stack producing image tokens at two resolutions:
// four 3x3 stride-2 stages of widths 16/32/64/128 with relu, a fine tap
// after stage 3 and a coarse tap after stage 4, each linearly projected
// to the model dimension d.
struct ImageEncoderParams {
  std::vector<Tensor> conv_w;  // [Co,Ci,3,3] per stage
  std::vector<Tensor> conv_b;
  Tensor proj_fine_w, proj_fine_b;      // [64,d],[d]
  Tensor proj_coarse_w, proj_coarse_b;  // [128,d],[d]
  int d = 0;
};

struct FeatureMapPair {
  Tensor coarse;  // [Hc*Wc, d]
  Tensor fine;    // [Hf*Wf, d]
  std::size_t hc = 0, wc = 0, hf = 0, wf = 0;

  std::size_t token_count() const { return hc * wc + hf * wf; }
};

ImageEncoderParams make_image_encoder(ParamStore& store, int d, Rng& rng);

// x is [3,H,W]; H and W must be multiples of 16 so both taps divide evenly.
FeatureMapPair encode_image(const Tensor& x, const ImageEncoderParams& p);
FeatureMapPair encode_image(const ImageTensor& img,
                            const ImageEncoderParams& p);

Tensor image_to_tensor(const ImageTensor& img, bool requires_grad = false);

// Row-major flattening, coarse tokens first, each tagged with its group
// and original (row, col). Ordering is part of the checkpoint contract.
TokenSequence flatten_tokens(const FeatureMapPair& fm, bool use_fine = true);

}  // namespace maaf
