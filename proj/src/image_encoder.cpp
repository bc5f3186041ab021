#include "maaf/image_encoder.hpp"

namespace maaf {

namespace {
constexpr int kStageWidths[4] = {16, 32, 64, 128};
}

ImageEncoderParams make_image_encoder(ParamStore& store, int d, Rng& rng) {
  ImageEncoderParams p;
  p.d = d;
  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    const int cout = kStageWidths[s];
    p.conv_w.push_back(store.create(
        "image_encoder/conv" + std::to_string(s) + "/w",
        {static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), 3, 3},
        ParamGroup::Image, rng));
    p.conv_b.push_back(store.create_const(
        "image_encoder/conv" + std::to_string(s) + "/b",
        {static_cast<std::size_t>(cout)}, real(0), ParamGroup::Image));
    cin = cout;
  }
  const auto dd = static_cast<std::size_t>(d);
  p.proj_fine_w = store.create("image_encoder/proj_fine/w", {64, dd},
                               ParamGroup::Other, rng);
  p.proj_fine_b = store.create_const("image_encoder/proj_fine/b", {dd},
                                     real(0), ParamGroup::Other);
  p.proj_coarse_w = store.create("image_encoder/proj_coarse/w", {128, dd},
                                 ParamGroup::Other, rng);
  p.proj_coarse_b = store.create_const("image_encoder/proj_coarse/b", {dd},
                                       real(0), ParamGroup::Other);
  return p;
}

Tensor image_to_tensor(const ImageTensor& img, bool requires_grad) {
  return tensor({3, img.height, img.width}, img.values, requires_grad);
}

FeatureMapPair encode_image(const Tensor& x, const ImageEncoderParams& p) {
  if (x->shape.size() != 3 || x->shape[0] != 3) {
    throw Error("encode_image: expected [3,H,W] input, got " +
                shape_str(x->shape));
  }
  const std::size_t h = x->shape[1], w = x->shape[2];
  if (h % 16 != 0 || w % 16 != 0) {
    throw Error("encode_image: dimensions must be multiples of 16, got " +
                std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor cur = x;
  Tensor fine_map;
  for (int s = 0; s < 4; ++s) {
    cur = relu(conv2d(cur, p.conv_w[s], p.conv_b[s], 2, 1));
    if (s == 2) fine_map = cur;
  }
  FeatureMapPair fm;
  fm.hf = h / 8;
  fm.wf = w / 8;
  fm.hc = h / 16;
  fm.wc = w / 16;
  // [C,H,W] -> [H*W, C] -> project to d
  Tensor fine_flat = reshape(fine_map, {64, fm.hf * fm.wf});
  fm.fine = add_bias(matmul(fine_flat, p.proj_fine_w, true, false),
                     p.proj_fine_b);
  Tensor coarse_flat = reshape(cur, {128, fm.hc * fm.wc});
  fm.coarse = add_bias(matmul(coarse_flat, p.proj_coarse_w, true, false),
                       p.proj_coarse_b);
  return fm;
}

FeatureMapPair encode_image(const ImageTensor& img,
                            const ImageEncoderParams& p) {
  if (img.values.size() != 3 * img.height * img.width) {
    throw Error("encode_image: image buffer does not match dimensions");
  }
  return encode_image(image_to_tensor(img), p);
}

TokenSequence flatten_tokens(const FeatureMapPair& fm, bool use_fine) {
  TokenSequence seq;
  std::vector<Tensor> parts{fm.coarse};
  for (std::size_t r = 0; r < fm.hc; ++r)
    for (std::size_t c = 0; c < fm.wc; ++c) {
      seq.groups.push_back(TokenGroup::CoarseImage);
      seq.positions.emplace_back(static_cast<int>(r), static_cast<int>(c));
    }
  if (use_fine) {
    parts.push_back(fm.fine);
    for (std::size_t r = 0; r < fm.hf; ++r)
      for (std::size_t c = 0; c < fm.wf; ++c) {
        seq.groups.push_back(TokenGroup::FineImage);
        seq.positions.emplace_back(static_cast<int>(r), static_cast<int>(c));
      }
  }
  seq.tokens = parts.size() == 1 ? parts[0] : concat_rows(parts);
  return seq;
}

}  // namespace maaf
