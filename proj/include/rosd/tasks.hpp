#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace rosd {

enum class Family { ArithChain, StringTransform };

std::string to_string(Family family);
/// Accepts "ARITH_CHAIN" / "STRING_TRANSFORM" (case-insensitive); throws ConfigError otherwise.
Family parse_family(std::string_view name);
std::vector<Family> all_families();

/// Modulus used by every ARITH_CHAIN problem.
inline constexpr int kArithModulus = 7;

struct TraceStep {
  std::string label;     // expression evaluated at this step, e.g. "(5+3) mod 7"
  std::string expected;  // canonical value of the intermediate
  bool operator==(const TraceStep&) const = default;
};

struct Problem {
  std::string id;
  Family family = Family::ArithChain;
  std::string prompt;
  std::string answer;
  std::vector<TraceStep> step_trace;
  std::uint64_t seed = 0;
  bool operator==(const Problem&) const = default;
};

struct VerifierResult {
  int reward = 0;
  std::optional<std::string> extracted_answer;
};

/// n distinct problems; a pure function of (family, seed, n).
std::vector<Problem> generate_problems(Family family, std::uint64_t seed, int n);

/// Renders "STEP <i>: <label> = <value>" lines and the final "ANSWER: <value>" line.
std::string render_solution(const Problem& problem);
std::string render_step_line(int index, const TraceStep& step);

/// Strips all whitespace and case-folds.
std::string canonical_answer(std::string_view raw);
bool answers_match(std::string_view a, std::string_view b);

/// Value of the last "ANSWER:" line, if any.
std::optional<std::string> extract_answer(std::string_view response);
VerifierResult verify(const Problem& problem, std::string_view response_text);

struct ParsedStepLine {
  int index = 0;
  std::string expr;
  std::string value;
};
std::optional<ParsedStepLine> parse_step_line(std::string_view line);

struct OracleFinding {
  std::string quote;
  std::string idea;
};

/// First step line of a wrong response that disagrees with the trace. `reward` is the
/// verifier reward of the response; calling this on a correct response is a ContractError.
std::optional<OracleFinding> oracle_first_error(const Problem& problem, std::string_view response_text,
                                                int reward);

/// Key idea used by the oracle reflector for a correct response.
std::string oracle_valid_idea(const Problem& problem);

void to_json(nlohmann::json& j, const Problem& p);
void from_json(const nlohmann::json& j, Problem& p);

std::string problems_to_jsonl(const std::vector<Problem>& problems);
std::vector<Problem> problems_from_jsonl(std::string_view text);

}  // namespace rosd
