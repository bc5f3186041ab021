#include "maaf/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace maaf {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const auto& w : words) add(w);
}

void Vocabulary::add(const std::string& word) {
  if (index_.count(word)) return;
  words_.push_back(word);
  index_[word] = static_cast<int>(words_.size());  // 0 is UNK
}

int Vocabulary::index_of(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? 0 : it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("vocabulary: cannot open " + path);
  for (const auto& w : words_) out << w << "\n";
  if (!out) throw Error("vocabulary: write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.add(line);
  }
  return v;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::ispunct(u) && ch != '+') continue;  // "+" joins captions
    cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  std::istringstream is(cleaned);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

TokenizedCaption tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenizedCaption tc;
  tc.original = text;
  tc.words = tokenize_words(text);
  for (const auto& w : tc.words) tc.indices.push_back(vocab.index_of(w));
  return tc;
}

TextVariant text_variant_from_string(const std::string& s) {
  if (s == "lstm") return TextVariant::Lstm;
  if (s == "embedding") return TextVariant::Embedding;
  if (s == "transformer1") return TextVariant::Transformer1;
  throw Error("unknown text variant: " + s);
}

std::string to_string(TextVariant v) {
  switch (v) {
    case TextVariant::Lstm: return "lstm";
    case TextVariant::Embedding: return "embedding";
    case TextVariant::Transformer1: return "transformer1";
  }
  throw Error("bad text variant");
}

TextEncoderParams make_text_encoder(ParamStore& store, int d,
                                    std::size_t vocab_size,
                                    TextVariant variant, Rng& rng) {
  TextEncoderParams p;
  p.d = d;
  p.variant = variant;
  const auto dd = static_cast<std::size_t>(d);
  p.embedding = store.create("text_encoder/embedding", {vocab_size, dd},
                             ParamGroup::Other, rng);
  if (variant == TextVariant::Lstm) {
    p.lstm_wx =
        store.create("text_encoder/lstm/wx", {dd, 4 * dd}, ParamGroup::Other, rng);
    p.lstm_wh =
        store.create("text_encoder/lstm/wh", {dd, 4 * dd}, ParamGroup::Other, rng);
    p.lstm_b = store.create_const("text_encoder/lstm/b", {4 * dd}, real(0),
                                  ParamGroup::Other);
  }
  return p;
}

namespace {

// standard LSTM cell over embedded words; zero initial hidden/cell state
Tensor lstm_forward(const Tensor& embedded, const TextEncoderParams& p) {
  const std::size_t n = embedded->shape[0];
  const auto d = static_cast<std::size_t>(p.d);
  Tensor h = zeros({1, d});
  Tensor c = zeros({1, d});
  std::vector<Tensor> hs;
  for (std::size_t t = 0; t < n; ++t) {
    Tensor xt = slice_rows(embedded, t, 1);
    Tensor gates = add_bias(
        add(matmul(xt, p.lstm_wx), matmul(h, p.lstm_wh)), p.lstm_b);
    Tensor i = sigmoid(slice_cols(gates, 0, d));
    Tensor f = sigmoid(slice_cols(gates, d, d));
    Tensor g = tanh(slice_cols(gates, 2 * d, d));
    Tensor o = sigmoid(slice_cols(gates, 3 * d, d));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    hs.push_back(h);
  }
  return concat_rows(hs);
}

}  // namespace

TokenSequence encode_text(const TokenizedCaption& tc,
                          const TextEncoderParams& p, bool allow_empty) {
  TokenSequence seq;
  if (tc.empty()) {
    if (!allow_empty) {
      throw Error("encode_text: empty caption");
    }
    seq.tokens = zeros({0, static_cast<std::size_t>(p.d)});
    return seq;
  }
  Tensor embedded = embedding_lookup(tc.indices, p.embedding);
  switch (p.variant) {
    case TextVariant::Lstm:
      seq.tokens = lstm_forward(embedded, p);
      break;
    case TextVariant::Embedding:
    case TextVariant::Transformer1:
      // transformer1 applies its fusion-style block downstream
      seq.tokens = embedded;
      break;
  }
  for (std::size_t i = 0; i < tc.indices.size(); ++i) {
    seq.groups.push_back(TokenGroup::Text);
    seq.positions.emplace_back(-1, static_cast<int>(i));
  }
  return seq;
}

}  // namespace maaf
