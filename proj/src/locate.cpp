#include "rosd/locate.hpp"

#include <cctype>

#include "rosd/errors.hpp"

namespace rosd {

namespace {

struct Normalized {
  std::string text;
  std::vector<std::size_t> origin;  // normalized index -> original index
};

Normalized normalize(std::string_view s) {
  Normalized n;
  bool in_space = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      if (!in_space) {
        n.text += ' ';
        n.origin.push_back(i);
      }
      in_space = true;
      continue;
    }
    in_space = false;
    n.text += static_cast<char>(std::tolower(c));
    n.origin.push_back(i);
  }
  return n;
}

std::string trim_spaces(std::string s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

int token_at(std::size_t char_pos, std::span<const CharSpan> offsets) {
  for (std::size_t t = 0; t < offsets.size(); ++t) {
    if (offsets[t].begin <= char_pos && char_pos < offsets[t].end) return static_cast<int>(t);
  }
  throw InputError("locate: offsets do not cover the matched character");
}

}  // namespace

std::string to_string(MatchKind m) {
  switch (m) {
    case MatchKind::Exact: return "EXACT";
    case MatchKind::Normalized: return "NORMALIZED";
    case MatchKind::None: return "NONE";
  }
  return "NONE";
}

LocatedError locate(std::string_view quote, std::string_view text, std::span<const CharSpan> offsets,
                    const LocateOptions& options) {
  if (quote.empty()) throw ContractError("locate: quote must be non-empty");
  LocatedError out;
  if (const auto pos = text.find(quote); pos != std::string_view::npos) {
    out.matched = true;
    out.match_kind = MatchKind::Exact;
    out.char_span = CharSpan{pos, pos + quote.size()};
    out.k = token_at(pos, offsets);
    return out;
  }
  if (!options.normalized) return out;
  const Normalized nt = normalize(text);
  const std::string nq = trim_spaces(normalize(quote).text);
  if (nq.empty()) return out;
  const auto pos = nt.text.find(nq);
  if (pos == std::string::npos) return out;
  const std::size_t begin = nt.origin[pos];
  const std::size_t last = nt.origin[pos + nq.size() - 1];
  out.matched = true;
  out.match_kind = MatchKind::Normalized;
  out.char_span = CharSpan{begin, last + 1};
  out.k = token_at(begin, offsets);
  return out;
}

LocatedError locate(std::string_view quote, const Rollout& rollout, const LocateOptions& options) {
  return locate(quote, rollout.text, rollout.offsets, options);
}

DistillationMask build_mask(const LocatedError& located, int length, bool rollout_correct) {
  if (length < 1) throw InputError("build_mask: rollout length must be >= 1");
  DistillationMask m;
  m.length = length;
  m.k = rollout_correct || !located.matched ? 0 : located.k;
  if (!rollout_correct && located.matched && located.k >= length) {
    throw InputError("build_mask: located index " + std::to_string(located.k) + " is past the rollout end");
  }
  m.weights.assign(static_cast<std::size_t>(length), 1.0);
  for (int t = 0; t < m.k; ++t) m.weights[static_cast<std::size_t>(t)] = 0.0;
  return m;
}

LocalizationMetrics localization_metrics(std::span<const LocalizationSample> batch) {
  if (batch.empty()) throw InputError("localization_metrics: empty batch");
  std::size_t matched = 0;
  double pos_sum = 0.0;
  for (const auto& s : batch) {
    if (!s.located.matched) continue;
    if (s.length < 1) throw InputError("localization_metrics: non-positive rollout length");
    ++matched;
    pos_sum += static_cast<double>(s.located.k) / static_cast<double>(s.length);
  }
  LocalizationMetrics m;
  m.match_rate = static_cast<double>(matched) / static_cast<double>(batch.size());
  if (matched > 0) m.mean_normalized_position = pos_sum / static_cast<double>(matched);
  return m;
}

}  // namespace rosd
