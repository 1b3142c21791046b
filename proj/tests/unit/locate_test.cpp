#include <gtest/gtest.h>

#include "rosd/errors.hpp"
#include "rosd/locate.hpp"
#include "rosd/rng.hpp"

namespace rosd {
namespace {

// "A B C D E" split into word tokens that carry their trailing space.
std::vector<CharSpan> word_offsets(const std::string& text) {
  std::vector<CharSpan> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ' ') {
      const std::size_t end = i == text.size() ? i : i + 1;
      out.push_back({start, end});
      start = end;
    }
  }
  return out;
}

TEST(Locate, ExactSubstring) {
  const std::string text = "A B C D E";
  const auto loc = locate("C D", text, word_offsets(text));
  EXPECT_TRUE(loc.matched);
  EXPECT_EQ(loc.k, 2);
  EXPECT_EQ(loc.match_kind, MatchKind::Exact);
  ASSERT_TRUE(loc.char_span.has_value());
  EXPECT_EQ(loc.char_span->begin, 4u);
}

TEST(Locate, AbsentQuoteFallsBack) {
  const std::string text = "A B C D E";
  const auto loc = locate("Z", text, word_offsets(text));
  EXPECT_FALSE(loc.matched);
  EXPECT_EQ(loc.k, 0);
  EXPECT_EQ(loc.match_kind, MatchKind::None);
  EXPECT_FALSE(loc.char_span.has_value());
}

TEST(Locate, NormalisedMatchFindsSameToken) {
  const std::string text = "A B C D E";
  const auto loc = locate("c  d", text, word_offsets(text));
  EXPECT_TRUE(loc.matched);
  EXPECT_EQ(loc.match_kind, MatchKind::Normalized);
  EXPECT_EQ(loc.k, 2);
}

TEST(Locate, NormalisationCanBeDisabled) {
  const std::string text = "A B C D E";
  EXPECT_FALSE(locate("c  d", text, word_offsets(text), LocateOptions{false}).matched);
}

TEST(Locate, FirstOccurrenceWins) {
  const std::string text = "X Y X Y";
  EXPECT_EQ(locate("X Y", text, word_offsets(text)).k, 0);
  EXPECT_EQ(locate("Y X", text, word_offsets(text)).k, 1);
}

TEST(Locate, StartInsideTokenMapsToContainingToken) {
  const std::string text = "alpha beta gamma";
  EXPECT_EQ(locate("ta gam", text, word_offsets(text)).k, 1);
}

TEST(Locate, EmptyQuoteIsContractError) {
  EXPECT_THROW(locate("", "A B", word_offsets("A B")), ContractError);
}

TEST(Locate, IsPure) {
  const std::string text = "A B C D E";
  const auto a = locate("D", text, word_offsets(text));
  const auto b = locate("D", text, word_offsets(text));
  EXPECT_EQ(a.k, b.k);
  EXPECT_EQ(a.match_kind, b.match_kind);
}

TEST(BuildMask, WrongRolloutMasksPrefix) {
  LocatedError loc{3, true, MatchKind::Exact, CharSpan{6, 7}};
  const auto m = build_mask(loc, 5, false);
  EXPECT_EQ(m.weights, (std::vector<double>{0, 0, 0, 1, 1}));
  EXPECT_EQ(m.k, 3);
  EXPECT_EQ(m.length, 5);
}

TEST(BuildMask, UnmatchedIsAllOnes) {
  EXPECT_EQ(build_mask(LocatedError{}, 4, false).weights, (std::vector<double>{1, 1, 1, 1}));
}

TEST(BuildMask, CorrectRolloutIsAllOnes) {
  LocatedError loc{2, true, MatchKind::Exact, CharSpan{1, 2}};
  EXPECT_EQ(build_mask(loc, 3, true).weights, (std::vector<double>{1, 1, 1}));
}

TEST(BuildMask, Errors) {
  LocatedError past{5, true, MatchKind::Exact, CharSpan{9, 10}};
  EXPECT_THROW(build_mask(past, 5, false), InputError);
  EXPECT_THROW(build_mask(LocatedError{}, 0, false), InputError);
}

TEST(BuildMask, MonotoneSuffixProperty) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const int T = 1 + static_cast<int>(rng.below(40));
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    const auto m = build_mask(LocatedError{k, true, MatchKind::Exact, CharSpan{0, 1}}, T, false);
    for (int t = 1; t < T; ++t) EXPECT_LE(m.weights[static_cast<std::size_t>(t - 1)], m.weights[static_cast<std::size_t>(t)]);
    for (int t = 0; t < k; ++t) EXPECT_EQ(m.weights[static_cast<std::size_t>(t)], 0.0);
  }
}

TEST(LocalizationMetrics, MatchRate) {
  std::vector<LocalizationSample> batch;
  for (int i = 0; i < 6; ++i) {
    LocatedError loc;
    if (i % 2 == 0) loc = LocatedError{2, true, MatchKind::Exact, CharSpan{0, 1}};
    batch.push_back({loc, 8});
  }
  EXPECT_EQ(localization_metrics(batch).match_rate, 0.5);
}

TEST(LocalizationMetrics, NormalisedPosition) {
  const std::vector<LocalizationSample> batch{{LocatedError{4, true, MatchKind::Exact, CharSpan{0, 1}}, 8}};
  EXPECT_EQ(localization_metrics(batch).mean_normalized_position, 0.5);
}

TEST(LocalizationMetrics, AllUnmatchedHasNoPosition) {
  const std::vector<LocalizationSample> batch{{LocatedError{}, 8}, {LocatedError{}, 3}};
  const auto m = localization_metrics(batch);
  EXPECT_EQ(m.match_rate, 0.0);
  EXPECT_FALSE(m.mean_normalized_position.has_value());
}

TEST(LocalizationMetrics, EmptyBatchIsInputError) {
  EXPECT_THROW(localization_metrics({}), InputError);
}

}  // namespace
}  // namespace rosd
