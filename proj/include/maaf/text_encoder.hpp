#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "maaf/params.hpp"
#include "maaf/tokens.hpp"

namespace maaf {

// Word -> index map, index 0 reserved for unknown words. Built from
// training captions only; ordering is stable and persisted in checkpoints.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& words);

  // adds unseen words in first-seen order
  void add(const std::string& word);
  int index_of(const std::string& word) const;  // 0 if unknown
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size() + 1; }  // incl. UNK

  // one word per line, line number = index - 1; UNK implicit
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct TokenizedCaption {
  std::vector<int> indices;
  std::vector<std::string> words;
  std::string original;

  bool empty() const { return indices.empty(); }
};

// Lowercase, ASCII punctuation stripped, whitespace-split. Multiple
// captions are joined by the literal token "+" before calling this.
std::vector<std::string> tokenize_words(const std::string& text);
TokenizedCaption tokenize(const std::string& text, const Vocabulary& vocab);

enum class TextVariant { Lstm, Embedding, Transformer1 };

TextVariant text_variant_from_string(const std::string& s);
std::string to_string(TextVariant v);

struct TextEncoderParams {
  Tensor embedding;  // [V, d]
  // LSTM, gate order i|f|g|o along the 4d axis
  Tensor lstm_wx;  // [d, 4d]
  Tensor lstm_wh;  // [d, 4d]
  Tensor lstm_b;   // [4d]
  int d = 0;
  TextVariant variant = TextVariant::Lstm;
};

TextEncoderParams make_text_encoder(ParamStore& store, int d,
                                    std::size_t vocab_size,
                                    TextVariant variant, Rng& rng);

// One output token per input word, all tagged group=text. The lstm
// variant emits the hidden state at each word; embedding emits the raw
// word embeddings. The transformer1 variant is assembled in the fusion
// module on top of encode_text(embedding).
TokenSequence encode_text(const TokenizedCaption& tc,
                          const TextEncoderParams& p,
                          bool allow_empty = false);

}  // namespace maaf
