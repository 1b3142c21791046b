#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rosd {

using TokenId = int;

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct Encoding {
  std::vector<TokenId> ids;
  std::vector<CharSpan> offsets;
};

/// Greedy longest-match tokenizer over a closed vocabulary: special tokens, every printable
/// ASCII character (so any ASCII text round-trips) and multi-character grammar/template phrases.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;

  /// The vocabulary used by every model in this project.
  static Tokenizer task_grammar();

  explicit Tokenizer(std::vector<std::string> vocab);

  /// Throws InputError on characters outside the vocabulary.
  Encoding encode(std::string_view text) const;
  std::vector<TokenId> encode_ids(std::string_view text) const { return encode(text).ids; }
  /// Special tokens decode to the empty string.
  std::string decode(std::span<const TokenId> ids) const;
  const std::string& piece(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  bool is_special(TokenId id) const { return id >= 0 && id < 4; }

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  /// Offsets of `ids` laid end to end (what encode would report for decode(ids)).
  std::vector<CharSpan> offsets_of(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> vocab_;
  // first byte -> candidate phrase ids, longest first
  std::unordered_map<unsigned char, std::vector<TokenId>> by_first_;
};

}  // namespace rosd
