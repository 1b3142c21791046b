#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/distill.hpp"
#include "rosd/policy.hpp"

namespace rosd {

enum class MatchKind { Exact, Normalized, None };
std::string to_string(MatchKind m);

struct LocatedError {
  int k = 0;
  bool matched = false;
  MatchKind match_kind = MatchKind::None;
  std::optional<CharSpan> char_span;
};

struct LocateOptions {
  /// Second stage: whitespace-collapsed, case-folded search. Off = exact substring only.
  bool normalized = true;
};

/// Token index at which the first occurrence of `quote` begins (k = 0 and unmatched on a miss).
/// A match starting inside a token maps to that token.
LocatedError locate(std::string_view quote, std::string_view text, std::span<const CharSpan> offsets,
                    const LocateOptions& options = {});
LocatedError locate(std::string_view quote, const Rollout& rollout, const LocateOptions& options = {});

/// Correct rollouts: all ones. Wrong rollouts: 0 before k, 1 from k on.
DistillationMask build_mask(const LocatedError& located, int length, bool rollout_correct);

struct LocalizationSample {
  LocatedError located;
  int length = 0;
};

struct LocalizationMetrics {
  double match_rate = 0.0;
  /// Mean of k / T over matched items; absent when nothing matched.
  std::optional<double> mean_normalized_position;
};

LocalizationMetrics localization_metrics(std::span<const LocalizationSample> batch);

}  // namespace rosd
