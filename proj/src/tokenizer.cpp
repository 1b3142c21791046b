#include "rosd/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "rosd/errors.hpp"
#include "rosd/prompts.hpp"

namespace rosd {

namespace {

const std::vector<std::string>& grammar_phrases() {
  static const std::vector<std::string> phrases = {
      "STEP ", ": (", ": ", ") mod ", " = ", "ANSWER: ", "Compute ", "rev(", "rot(", "sub(",
      "((", "(((", "((((", "(((((", "((((((",
      "The value in STEP ", " should be ", "The final answer should be ",
      "The reasoning is valid and the answer is ", "There are only ", " steps and the answer is ",
  };
  return phrases;
}

}  // namespace

Tokenizer Tokenizer::task_grammar() {
  std::vector<std::string> vocab = {"<pad>", "<bos>", "<eos>", "<sep>", "\n"};
  for (int c = 32; c < 127; ++c) vocab.emplace_back(1, static_cast<char>(c));
  std::set<std::string> seen(vocab.begin(), vocab.end());
  auto add = [&](const std::string& p) {
    if (seen.insert(p).second) vocab.push_back(p);
  };
  for (const auto& p : grammar_phrases()) add(p);
  for (const auto& p : prompts::template_fragments()) add(p);
  return Tokenizer(std::move(vocab));
}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  if (vocab_.size() < 4) throw ConfigError("tokenizer vocabulary must start with the 4 special tokens");
  for (TokenId id = 4; id < size(); ++id) {
    const auto& p = vocab_[static_cast<std::size_t>(id)];
    if (p.empty()) throw ConfigError("empty vocabulary entry");
    by_first_[static_cast<unsigned char>(p[0])].push_back(id);
  }
  for (auto& [c, ids] : by_first_) {
    std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return piece(a).size() > piece(b).size(); });
  }
}

Encoding Tokenizer::encode(std::string_view text) const {
  Encoding enc;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto it = by_first_.find(static_cast<unsigned char>(text[pos]));
    TokenId match = -1;
    if (it != by_first_.end()) {
      for (TokenId id : it->second) {
        const auto& p = piece(id);
        if (text.compare(pos, p.size(), p) == 0) {
          match = id;
          break;
        }
      }
    }
    if (match < 0) {
      throw InputError("character outside tokenizer vocabulary at offset " + std::to_string(pos));
    }
    enc.ids.push_back(match);
    enc.offsets.push_back({pos, pos + piece(match).size()});
    pos += piece(match).size();
  }
  return enc;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= size()) throw InputError("token id out of range: " + std::to_string(id));
    if (!is_special(id)) out += piece(id);
  }
  return out;
}

std::vector<CharSpan> Tokenizer::offsets_of(std::span<const TokenId> ids) const {
  std::vector<CharSpan> out;
  out.reserve(ids.size());
  std::size_t pos = 0;
  for (TokenId id : ids) {
    const std::size_t len = is_special(id) ? 0 : piece(id).size();
    out.push_back({pos, pos + len});
    pos += len;
  }
  return out;
}

}  // namespace rosd
