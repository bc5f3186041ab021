#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "maaf/image_encoder.hpp"
#include "maaf/text_encoder.hpp"

using namespace maaf;

TEST_CASE("tokenizer lowercases, strips punctuation, keeps the joiner") {
  auto words = tokenize_words("Make top-left, RED sphere + remove it!");
  std::vector<std::string> expect{"make", "topleft", "red",
                                  "sphere", "+", "remove", "it"};
  CHECK(words == expect);
  CHECK(tokenize_words("").empty());
  CHECK(tokenize_words("  ...  ").empty());
}

TEST_CASE("vocabulary maps unknown words to index zero") {
  Vocabulary v({"make", "red", "sphere"});
  CHECK(v.index_of("make") == 1);
  CHECK(v.index_of("red") == 2);
  CHECK(v.index_of("sphere") == 3);
  CHECK(v.index_of("banana") == 0);
  CHECK(v.size() == 4);  // includes the unknown slot
}

TEST_CASE("vocabulary file round-trips with stable indices") {
  Vocabulary v({"alpha", "beta", "gamma"});
  const auto path =
      (std::filesystem::temp_directory_path() / "maaf_vocab_test.txt").string();
  v.save(path);
  Vocabulary w = Vocabulary::load(path);
  CHECK(w.words() == v.words());
  CHECK(w.index_of("gamma") == 3);
  std::remove(path.c_str());
}

TEST_CASE("lstm hidden states match a scalar reference cell") {
  const int d = 2;
  ParamStore store;
  Rng rng(3);
  TextEncoderParams p = make_text_encoder(store, d, 5, TextVariant::Lstm, rng);
  // overwrite with hand-picked small weights
  Rng wr(17);
  for (Tensor t : {p.embedding, p.lstm_wx, p.lstm_wh, p.lstm_b})
    for (auto& v : t->values) v = static_cast<real>(wr.uniform(-0.5, 0.5));

  TokenizedCaption tc;
  tc.indices = {2, 4, 1};
  tc.words = {"a", "b", "c"};
  TokenSequence seq = encode_text(tc, p);
  REQUIRE(seq.tokens->shape == std::vector<std::size_t>{3, 2});

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double h[2] = {0, 0}, c[2] = {0, 0};
  for (std::size_t t = 0; t < 3; ++t) {
    const real* x = &p.embedding->values[tc.indices[t] * d];
    double gates[8];
    for (int j = 0; j < 8; ++j) {
      double z = p.lstm_b->values[j];
      for (int k = 0; k < d; ++k) {
        z += x[k] * p.lstm_wx->values[k * 4 * d + j];
        z += h[k] * p.lstm_wh->values[k * 4 * d + j];
      }
      gates[j] = z;
    }
    for (int k = 0; k < d; ++k) {
      const double i = sig(gates[k]);
      const double f = sig(gates[d + k]);
      const double g = std::tanh(gates[2 * d + k]);
      const double o = sig(gates[3 * d + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
    for (int k = 0; k < d; ++k)
      CHECK(seq.tokens->values[t * d + k] ==
            doctest::Approx(h[k]).epsilon(1e-12));
  }
}

TEST_CASE("embedding text variant returns the raw word embeddings") {
  ParamStore store;
  Rng rng(4);
  TextEncoderParams p =
      make_text_encoder(store, 3, 4, TextVariant::Embedding, rng);
  TokenizedCaption tc;
  tc.indices = {1, 3};
  tc.words = {"x", "y"};
  TokenSequence seq = encode_text(tc, p);
  for (int t = 0; t < 2; ++t)
    for (int k = 0; k < 3; ++k)
      CHECK(seq.tokens->values[t * 3 + k] ==
            p.embedding->values[tc.indices[t] * 3 + k]);
  CHECK(seq.groups == std::vector<TokenGroup>(2, TokenGroup::Text));
}

TEST_CASE("empty captions are rejected unless explicitly allowed") {
  ParamStore store;
  Rng rng(5);
  TextEncoderParams p = make_text_encoder(store, 3, 4, TextVariant::Lstm, rng);
  TokenizedCaption tc;
  CHECK_THROWS_AS(encode_text(tc, p), Error);
  TokenSequence seq = encode_text(tc, p, true);
  CHECK(seq.length() == 0);
  CHECK(seq.tokens->shape == std::vector<std::size_t>{0, 3});
}

TEST_CASE("image encoder produces both tap resolutions") {
  ParamStore store;
  Rng rng(6);
  ImageEncoderParams p = make_image_encoder(store, 8, rng);
  ImageTensor img = image_zeros(48, 64);
  Rng pix(7);
  for (auto& v : img.values) v = static_cast<real>(pix.uniform());
  FeatureMapPair fm = encode_image(img, p);
  CHECK(fm.hc == 3);
  CHECK(fm.wc == 4);
  CHECK(fm.hf == 6);
  CHECK(fm.wf == 8);
  CHECK(fm.coarse->shape == std::vector<std::size_t>{12, 8});
  CHECK(fm.fine->shape == std::vector<std::size_t>{48, 8});
}

TEST_CASE("image encoder rejects malformed inputs") {
  ParamStore store;
  Rng rng(8);
  ImageEncoderParams p = make_image_encoder(store, 8, rng);
  CHECK_THROWS_AS(encode_image(zeros({1, 48, 48}), p), Error);
  CHECK_THROWS_AS(encode_image(zeros({3, 47, 48}), p), Error);
  CHECK_THROWS_AS(encode_image(zeros({3, 48}), p), Error);
}

TEST_CASE("token flattening is row-major with coarse tokens first") {
  ParamStore store;
  Rng rng(9);
  ImageEncoderParams p = make_image_encoder(store, 4, rng);
  ImageTensor img = image_zeros(32, 48);
  FeatureMapPair fm = encode_image(img, p);
  TokenSequence seq = flatten_tokens(fm, true);
  REQUIRE(seq.length() == fm.token_count());
  CHECK(seq.groups[0] == TokenGroup::CoarseImage);
  CHECK(seq.positions[0] == std::pair<int, int>{0, 0});
  CHECK(seq.positions[1] == std::pair<int, int>{0, 1});
  CHECK(seq.positions[fm.wc] == std::pair<int, int>{1, 0});
  const auto [fstart, flen] = seq.range(TokenGroup::FineImage);
  CHECK(fstart == fm.hc * fm.wc);
  CHECK(flen == fm.hf * fm.wf);
  // fine token values equal the fine map rows in order
  for (std::size_t i = 0; i < flen; ++i)
    for (int k = 0; k < 4; ++k)
      CHECK(seq.tokens->values[(fstart + i) * 4 + k] ==
            fm.fine->values[i * 4 + k]);

  TokenSequence coarse_only = flatten_tokens(fm, false);
  CHECK(coarse_only.length() == fm.hc * fm.wc);
  CHECK(coarse_only.count(TokenGroup::FineImage) == 0);
}

TEST_CASE("parameter init stays inside the glorot bound") {
  ParamStore store;
  Rng rng(10);
  Tensor w = store.create("w", {20, 30}, ParamGroup::Other, rng);
  const real bound = std::sqrt(real(6) / (20 + 30));
  real mx = 0;
  for (real v : w->values) {
    CHECK(std::abs(v) <= bound);
    mx = std::max(mx, std::abs(v));
  }
  CHECK(mx > bound / 2);  // actually spreads over the range
}

TEST_CASE("parameter store tracks entries and rejects duplicate names") {
  ParamStore store;
  Rng rng(11);
  store.create("a", {2, 2}, ParamGroup::Image, rng);
  store.create_const("b", {3}, real(0), ParamGroup::Other);
  CHECK(store.total_parameters() == 7);
  CHECK(store.find("a")->shape == std::vector<std::size_t>{2, 2});
  CHECK_THROWS_AS(store.create("a", {1}, ParamGroup::Other, rng), Error);
  CHECK_THROWS_AS(store.find("missing"), Error);
}
