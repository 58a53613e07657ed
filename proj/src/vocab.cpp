#include "guard/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "guard/common.hpp"

namespace guard {

namespace {

bool is_word_char(unsigned char c) {
  // Bytes >= 0x80 (UTF-8 continuation/lead bytes) are kept inside words so
  // multi-byte characters stay intact.
  return std::isalnum(c) || c == '\'' || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_pieces(const std::string& text) {
  std::vector<std::string> pieces;
  std::string word;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!word.empty()) pieces.push_back(std::move(word)), word.clear();
    } else if (is_word_char(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      // Punctuation splits words and becomes its own piece.
      if (!word.empty()) pieces.push_back(std::move(word)), word.clear();
      pieces.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  if (!word.empty()) pieces.push_back(std::move(word));
  return pieces;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t max_sequence_length)
    : tokens_(std::move(tokens)), max_sequence_length_(max_sequence_length) {
  if (max_sequence_length_ < 2) throw ConfigError("vocabulary: max_sequence_length must be >= 2");
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) {
      throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  auto require = [&](const char* token) {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ConfigError(std::string("vocabulary: missing ") + token);
    return it->second;
  };
  pad_id_ = require(kPadToken);
  unk_id_ = require(kUnkToken);
  cls_id_ = require(kClsToken);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t target_size,
                             std::size_t max_sequence_length) {
  std::map<std::string, std::uint64_t> word_freq;
  std::map<std::string, std::uint64_t> char_freq;
  for (const auto& text : texts) {
    for (auto& piece : split_pieces(text)) {
      ++word_freq[piece];
      if (piece.size() > 1) {
        for (char c : piece) ++char_freq[std::string(1, c)];
      }
    }
  }

  std::vector<std::string> tokens = {kPadToken, kUnkToken, kClsToken};
  auto by_freq_then_name = [](const auto& freqs) {
    std::vector<std::pair<std::string, std::uint64_t>> sorted(freqs.begin(), freqs.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    return sorted;
  };

  // Single characters first so word fallback has pieces to land on.
  for (auto& [token, freq] : by_freq_then_name(char_freq)) {
    (void)freq;
    if (tokens.size() >= target_size) break;
    if (std::find(tokens.begin(), tokens.end(), token) == tokens.end()) tokens.push_back(token);
  }
  for (auto& [token, freq] : by_freq_then_name(word_freq)) {
    (void)freq;
    if (tokens.size() >= target_size) break;
    if (std::find(tokens.begin(), tokens.end(), token) == tokens.end()) tokens.push_back(token);
  }
  return Vocabulary(std::move(tokens), max_sequence_length);
}

Vocabulary Vocabulary::load(const std::string& path, std::size_t max_sequence_length) {
  std::ifstream in(path);
  if (!in) throw InputError("vocabulary: cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens), max_sequence_length);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("vocabulary: cannot open " + path + " for writing");
  for (const auto& token : tokens_) out << token << '\n';
  if (!out) throw InputError("vocabulary: write failed for " + path);
}

std::size_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_id_ : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) != 0; }

std::vector<std::size_t> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  ids.push_back(vocab.cls_id());
  for (const auto& piece : split_pieces(text)) {
    if (ids.size() >= vocab.max_sequence_length()) break;
    if (vocab.contains(piece)) {
      ids.push_back(vocab.id_of(piece));
      continue;
    }
    // Character fallback; characters missing from the vocabulary become [UNK].
    for (char c : piece) {
      if (ids.size() >= vocab.max_sequence_length()) break;
      ids.push_back(vocab.id_of(std::string(1, c)));
    }
  }
  if (ids.size() > vocab.max_sequence_length()) ids.resize(vocab.max_sequence_length());
  return ids;
}

}  // namespace guard
