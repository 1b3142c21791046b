#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rosd/errors.hpp"
#include "rosd/locate.hpp"
#include "rosd/prompts.hpp"
#include "rosd/reflect.hpp"
#include "rosd/rng.hpp"

#ifndef ROSD_GOLDEN_DIR
#error "ROSD_GOLDEN_DIR must point at tests/golden"
#endif

namespace rosd {
namespace {

Rollout make_rollout(const Problem& p, int index, std::string text, int length) {
  Rollout r;
  r.problem_id = p.id;
  r.index = index;
  r.text = std::move(text);
  const Encoding e = grammar_tokenizer().encode(r.text);
  r.token_ids = e.ids;
  r.offsets = e.offsets;
  r.token_ids.resize(static_cast<std::size_t>(length), Tokenizer::kEos);
  r.offsets.resize(static_cast<std::size_t>(length), CharSpan{r.text.size(), r.text.size()});
  r.sample_logprobs.assign(static_cast<std::size_t>(length), -1.0);
  r.reward = verify(p, r.text).reward;
  return r;
}

Problem fixture_problem() {
  Problem p;
  p.id = "arith-fixture";
  p.family = Family::ArithChain;
  p.prompt = "Compute (((4+3)*5)-2) mod 7.";
  p.step_trace = {{"(4+3) mod 7", "0"}, {"(0*5) mod 7", "0"}, {"(0-2) mod 7", "5"}};
  p.answer = "5";
  return p;
}

const std::string kCorrect = "STEP 1: (4+3) mod 7 = 0\nSTEP 2: (0*5) mod 7 = 0\nSTEP 3: (0-2) mod 7 = 5\nANSWER: 5";
const std::string kWrong = "STEP 1: (4+3) mod 7 = 0\nSTEP 2: (0*5) mod 7 = 5\nSTEP 3: (5-2) mod 7 = 3\nANSWER: 3";

RolloutGroup group_with_lengths(const Problem& p, const std::vector<int>& correct_lengths, int wrong) {
  std::vector<Rollout> rs;
  int idx = 0;
  for (int len : correct_lengths) rs.push_back(make_rollout(p, idx++, kCorrect, len));
  for (int i = 0; i < wrong; ++i) rs.push_back(make_rollout(p, idx++, kWrong, 40));
  return make_group(p, std::move(rs));
}

void check_golden(const std::string& name, const std::string& actual) {
  const std::filesystem::path path = std::filesystem::path(ROSD_GOLDEN_DIR) / name;
  if (std::getenv("ROSD_UPDATE_GOLDEN") != nullptr) std::ofstream(path, std::ios::binary) << actual;
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(actual, ss.str()) << "rendering drifted from " << path << " (template version "
                              << prompts::kTemplateVersion << ")";
}

TEST(SelectReference, ShortestCorrectRollout) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {45, 42, 50}, 2);
  EXPECT_EQ(select_reference(g), 1);
}

TEST(SelectReference, TieGoesToLowestIndex) {
  const auto g = group_with_lengths(fixture_problem(), {42, 42}, 1);
  EXPECT_EQ(select_reference(g), 0);
}

TEST(SelectReference, NoCorrectRolloutIsAbsent) {
  EXPECT_FALSE(select_reference(group_with_lengths(fixture_problem(), {}, 3)).has_value());
}

TEST(BuildWrongPrompt, ContainsTagsRolloutAndAnswer) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42}, 1);
  const std::string s = build_wrong_prompt(p, g.rollouts[0], g.rollouts[1]);
  EXPECT_NE(s.find("<error_quote>"), std::string::npos);
  EXPECT_NE(s.find("<explanation>"), std::string::npos);
  EXPECT_NE(s.find(kWrong), std::string::npos);
  EXPECT_NE(s.find("The correct final answer is 5"), std::string::npos);
  EXPECT_LT(s.find("<error_quote>"), s.find("<explanation>"));
  check_golden("wrong_prompt_v1.txt", s);
}

TEST(BuildWrongPrompt, RewardPreconditions) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42}, 1);
  EXPECT_THROW(build_wrong_prompt(p, g.rollouts[1], g.rollouts[1]), ContractError);
  EXPECT_THROW(build_wrong_prompt(p, g.rollouts[0], g.rollouts[0]), ContractError);
}

TEST(BuildCorrectPrompt, ExplanationOnly) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42}, 1);
  const std::string s = build_correct_prompt(p, g.rollouts[0]);
  EXPECT_NE(s.find("<explanation>"), std::string::npos);
  EXPECT_EQ(s.find("<error_quote>"), std::string::npos);
  EXPECT_NE(s.find(kCorrect), std::string::npos);
  EXPECT_NE(s.find("5"), std::string::npos);
  EXPECT_THROW(build_correct_prompt(p, g.rollouts[1]), ContractError);
  check_golden("correct_prompt_v1.txt", s);
}

TEST(BuildTeacherContext, EmbedsIdeaAndPrompt) {
  const Problem p = fixture_problem();
  const std::string e = "The value in STEP 2 should be 0.";
  const auto c = build_teacher_context(p, e);
  EXPECT_NE(c.text.find(e), std::string::npos);
  EXPECT_NE(c.text.find(p.prompt), std::string::npos);
  EXPECT_NE(c.text.find("The following is the key idea to solve the question"), std::string::npos);
  EXPECT_NE(c.text.find("Correctly solve the original question."), std::string::npos);
  EXPECT_EQ(c.text.find(kCorrect), std::string::npos);
  EXPECT_EQ(c.text.find(kWrong), std::string::npos);
  check_golden("teacher_context_v1.txt", c.text);
  check_golden("student_context_v1.txt", prompts::student_context(p));
}

TEST(BuildTeacherContext, DifferentIdeasDifferOnlyInIdeaBlock) {
  const Problem p = fixture_problem();
  const std::string a = build_teacher_context(p, "idea one").text;
  const std::string b = build_teacher_context(p, "second idea").text;
  const auto pos = a.find("idea one");
  EXPECT_EQ(a.substr(0, pos), b.substr(0, pos));
  EXPECT_EQ(a.substr(pos + 8), b.substr(pos + 11));
}

TEST(BuildTeacherContext, EmptyIdeaIsContractError) {
  EXPECT_THROW(build_teacher_context(fixture_problem(), ""), ContractError);
  EXPECT_THROW(build_teacher_context(fixture_problem(), "  \n"), ContractError);
}

TEST(ParseReflection, WellFormedWrongRollout) {
  const auto r = parse_reflection("<error_quote>x = 3</error_quote><explanation>should be 2</explanation>",
                                  ReflectionKind::WrongRollout);
  ASSERT_TRUE(std::holds_alternative<Reflection>(r));
  const auto& ok = std::get<Reflection>(r);
  EXPECT_EQ(ok.error_quote, "x = 3");
  EXPECT_EQ(ok.key_idea, "should be 2");
}

TEST(ParseReflection, ExplanationOnlyForCorrectRollout) {
  const auto r = parse_reflection("  <explanation>\n fine \n</explanation> ", ReflectionKind::CorrectRollout);
  ASSERT_TRUE(std::holds_alternative<Reflection>(r));
  EXPECT_FALSE(std::get<Reflection>(r).error_quote.has_value());
  EXPECT_EQ(std::get<Reflection>(r).key_idea, "fine");
}

TEST(ParseReflection, MalformedInputsFail) {
  for (const std::string raw : {"no tags at all", "<explanation>a</explanation>",
                                "<error_quote>a</error_quote><error_quote>b</error_quote><explanation>c</explanation>",
                                "<error_quote>a<explanation>b</explanation></error_quote>",
                                "</error_quote>a<error_quote><explanation>b</explanation>"}) {
    const auto r = parse_reflection(raw, ReflectionKind::WrongRollout);
    ASSERT_TRUE(std::holds_alternative<ReflectionParseFailure>(r)) << raw;
    EXPECT_EQ(std::get<ReflectionParseFailure>(r).raw, raw);
  }
}

TEST(ParseReflection, TotalOnRandomText) {
  Rng rng(1);
  const std::string alphabet = "<>/_abceiloxnqrtpu= \n";
  for (int i = 0; i < 2000; ++i) {
    std::string raw;
    const int len = static_cast<int>(rng.below(60));
    for (int j = 0; j < len; ++j) raw += alphabet[rng.below(alphabet.size())];
    if (rng.below(3) == 0) raw = "<error_quote>" + raw;
    if (rng.below(3) == 0) raw += "<explanation>" + raw + "</explanation>";
    EXPECT_NO_THROW(parse_reflection(raw, ReflectionKind::WrongRollout));
    EXPECT_NO_THROW(parse_reflection(raw, ReflectionKind::CorrectRollout));
  }
}

TEST(RunReflector, OracleCardinalityAndKinds) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42, 44, 46}, 5);
  const auto out = run_reflector(ReflectorMode::Oracle, nullptr, p, g);
  ASSERT_EQ(out.size(), 8u);
  int wrong = 0;
  for (const auto& r : out) {
    ASSERT_TRUE(r.has_value());
    EXPECT_EQ(r->provenance, Provenance::Oracle);
    if (r->kind == ReflectionKind::WrongRollout) {
      ++wrong;
      EXPECT_TRUE(r->error_quote.has_value());
    } else {
      EXPECT_FALSE(r->error_quote.has_value());
    }
  }
  EXPECT_EQ(wrong, 5);
}

TEST(RunReflector, OracleQuotesWrongStepExactly) {
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42}, 1);
  const auto out = run_reflector(ReflectorMode::Oracle, nullptr, p, g);
  ASSERT_TRUE(out[1].has_value());
  EXPECT_EQ(out[1]->error_quote, "STEP 2: (0*5) mod 7 = 5");
  EXPECT_EQ(out[1]->key_idea, "The value in STEP 2 should be 0.");
}

TEST(RunReflector, NoReferenceMeansNoWrongReflections) {
  const Problem p = fixture_problem();
  const auto out = run_reflector(ReflectorMode::Oracle, nullptr, p, group_with_lengths(p, {}, 4));
  for (const auto& r : out) EXPECT_FALSE(r.has_value());
}

TEST(RunReflector, OracleQuotesAlwaysLocateExactly) {
  Rng rng(5);
  for (const auto& p : generate_problems(Family::ArithChain, 3, 100)) {
    std::vector<Rollout> rs;
    rs.push_back(make_rollout(p, 0, render_solution(p), 40));
    std::string text;
    for (std::size_t i = 0; i < p.step_trace.size(); ++i) {
      TraceStep s = p.step_trace[i];
      if (rng.below(2) == 0) s.expected = std::to_string((std::stoi(s.expected) + 3) % 7);
      text += render_step_line(static_cast<int>(i) + 1, s) + "\n";
    }
    text += "ANSWER: " + std::to_string((std::stoi(p.answer) + 1) % 7);
    const int len = static_cast<int>(grammar_tokenizer().encode_ids(text).size()) + 1;
    rs.push_back(make_rollout(p, 1, text, len));
    const auto g = make_group(p, std::move(rs));
    const auto out = run_reflector(ReflectorMode::Oracle, nullptr, p, g);
    ASSERT_TRUE(out[1].has_value());
    ASSERT_TRUE(out[1]->error_quote.has_value());
    EXPECT_NE(text.find(*out[1]->error_quote), std::string::npos);
    EXPECT_EQ(locate(*out[1]->error_quote, g.rollouts[1]).match_kind, MatchKind::Exact);
  }
}

TEST(RunReflector, ModelModeNeedsModel) {
  const Problem p = fixture_problem();
  EXPECT_THROW(run_reflector(ReflectorMode::Model, nullptr, p, group_with_lengths(p, {42}, 1)), ConfigError);
}

TEST(RunReflector, ModelModeDegradesGracefully) {
  ModelConfig c = default_model_config();
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.mlp = 16;
  const auto model = PolicyModel::random(c, 2, Role::Reflector);
  const Problem p = fixture_problem();
  const auto g = group_with_lengths(p, {42}, 2);
  ReflectorSettings st;
  st.max_output_tokens = 16;
  const auto out = run_reflector(ReflectorMode::Model, &model, p, g, st);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& r : out) {
    if (!r) continue;
    EXPECT_EQ(r->provenance, Provenance::Model);
    EXPECT_FALSE(r->key_idea.empty());
    if (r->parse_failed) EXPECT_FALSE(r->error_quote.has_value());
  }
}

TEST(Reflection, JsonRecord) {
  Reflection r;
  r.problem_id = "p";
  r.source_rollout = 3;
  r.key_idea = "idea";
  r.error_quote = "q";
  const nlohmann::json j = r;
  EXPECT_EQ(j["kind"], "WRONG_ROLLOUT");
  EXPECT_EQ(j["provenance"], "ORACLE");
  EXPECT_EQ(j["error_quote"], "q");
  EXPECT_EQ(j["source_rollout"], 3);
}

}  // namespace
}  // namespace rosd
