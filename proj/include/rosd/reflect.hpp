#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosd/policy.hpp"
#include "rosd/tasks.hpp"

namespace rosd {

enum class ReflectionKind { WrongRollout, CorrectRollout };
enum class Provenance { Model, Oracle };
using ReflectorMode = Provenance;

std::string to_string(ReflectionKind k);
std::string to_string(Provenance p);
Provenance parse_reflector_mode(std::string_view name);

struct Reflection {
  std::string key_idea;
  std::optional<std::string> error_quote;
  std::string problem_id;
  int source_rollout = 0;
  ReflectionKind kind = ReflectionKind::WrongRollout;
  Provenance provenance = Provenance::Oracle;
  bool parse_failed = false;  // model output was malformed and the raw text became the key idea
};

struct ReflectionParseFailure {
  std::string raw;
  std::string reason;
};

using ParsedReflection = std::variant<Reflection, ReflectionParseFailure>;

struct TeacherContext {
  std::string text;
};

/// Index of the shortest correct rollout (lowest index on ties); absent when none is correct.
std::optional<int> select_reference(const RolloutGroup& group);

std::string build_wrong_prompt(const Problem& problem, const Rollout& y_star, const Rollout& y_minus);
std::string build_correct_prompt(const Problem& problem, const Rollout& y_plus);

/// Never throws. Wrong-rollout reflections need both tags, correct-rollout ones only <explanation>.
ParsedReflection parse_reflection(std::string_view raw, ReflectionKind kind);

/// Teacher conditioning text carrying the key idea; throws ContractError on an empty idea.
TeacherContext build_teacher_context(const Problem& problem, std::string_view key_idea);

struct ReflectorSettings {
  int max_prompt_tokens = 512;
  int max_output_tokens = 256;
};

/// One slot per rollout of the group. A slot is empty when the rollout gets no reflection: wrong
/// rollouts in a group without a correct reference, and model outputs that are empty.
std::vector<std::optional<Reflection>> run_reflector(ReflectorMode mode, const PolicyModel* reflector,
                                                     const Problem& problem, const RolloutGroup& group,
                                                     const ReflectorSettings& settings = {});

void to_json(nlohmann::json& j, const Reflection& r);

}  // namespace rosd
