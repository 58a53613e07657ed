#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace guard {

// Token-to-id mapping with dense ids 0..V-1 and the three special pieces.
// Serialized as UTF-8 text, one token per line, line number = id.
class Vocabulary {
 public:
  static constexpr const char* kPadToken = "[PAD]";
  static constexpr const char* kUnkToken = "[UNK]";
  static constexpr const char* kClsToken = "[CLS]";

  Vocabulary(std::vector<std::string> tokens, std::size_t max_sequence_length = 512);

  // Frequency-based piece selection over a text corpus: specials, then every
  // single character seen, then the most frequent words until target_size.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t target_size = 1000,
                          std::size_t max_sequence_length = 512);

  static Vocabulary load(const std::string& path, std::size_t max_sequence_length = 512);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t max_sequence_length() const { return max_sequence_length_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t pad_id() const { return pad_id_; }
  std::size_t unk_id() const { return unk_id_; }
  std::size_t cls_id() const { return cls_id_; }

  // Dense id for a piece, or unk_id when absent.
  std::size_t id_of(const std::string& token) const;
  bool contains(const std::string& token) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t max_sequence_length_;
  std::size_t pad_id_ = 0;
  std::size_t unk_id_ = 0;
  std::size_t cls_id_ = 0;
};

// Lowercased whitespace-and-punctuation split. Words missing from the
// vocabulary fall back to their characters, unknown characters to [UNK].
// [CLS] is prepended and the sequence is truncated to max_sequence_length.
std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab);

// The surface pieces the tokenizer would look up, before vocabulary mapping.
std::vector<std::string> split_pieces(const std::string& text);

}  // namespace guard
