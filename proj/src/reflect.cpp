#include "rosd/reflect.hpp"

#include <algorithm>
#include <cctype>

#include "rosd/errors.hpp"
#include "rosd/prompts.hpp"

namespace rosd {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

constexpr std::string_view kTags[] = {"<error_quote>", "</error_quote>", "<explanation>", "</explanation>"};

// Content of a single <name>...</name> pair; error text on duplicates, nesting or absence.
std::variant<std::string, std::string> tag_content(std::string_view raw, std::string_view name) {
  const std::string open = "<" + std::string(name) + ">";
  const std::string close = "</" + std::string(name) + ">";
  const auto n_open = count(raw, open);
  const auto n_close = count(raw, close);
  if (n_open == 0 && n_close == 0) return std::variant<std::string, std::string>(std::in_place_index<1>, "missing " + open);
  if (n_open != 1 || n_close != 1) return std::variant<std::string, std::string>(std::in_place_index<1>, "duplicated " + open);
  const auto b = raw.find(open);
  const auto e = raw.find(close);
  if (e < b) return std::variant<std::string, std::string>(std::in_place_index<1>, "misordered " + open);
  const auto inner = raw.substr(b + open.size(), e - b - open.size());
  for (auto tag : kTags) {
    if (inner.find(tag) != std::string_view::npos) {
      return std::variant<std::string, std::string>(std::in_place_index<1>, "nested tag inside " + open);
    }
  }
  std::string content = trim(inner);
  if (content.empty()) return std::variant<std::string, std::string>(std::in_place_index<1>, "empty " + open);
  return std::variant<std::string, std::string>(std::in_place_index<0>, std::move(content));
}

std::string solver_problem_text(const Problem& problem) { return problem.prompt; }

}  // namespace

std::string to_string(ReflectionKind k) { return k == ReflectionKind::WrongRollout ? "WRONG_ROLLOUT" : "CORRECT_ROLLOUT"; }
std::string to_string(Provenance p) { return p == Provenance::Model ? "MODEL" : "ORACLE"; }

Provenance parse_reflector_mode(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "MODEL") return Provenance::Model;
  if (n == "ORACLE") return Provenance::Oracle;
  throw ConfigError("unknown reflector mode: " + std::string(name));
}

std::optional<int> select_reference(const RolloutGroup& group) {
  std::optional<int> best;
  for (int idx : group.correct) {
    const auto& r = group.rollouts[static_cast<std::size_t>(idx)];
    if (!best || r.length() < group.rollouts[static_cast<std::size_t>(*best)].length() ||
        (r.length() == group.rollouts[static_cast<std::size_t>(*best)].length() && idx < *best)) {
      best = idx;
    }
  }
  return best;
}

std::string build_wrong_prompt(const Problem& problem, const Rollout& y_star, const Rollout& y_minus) {
  if (y_minus.reward != 0 || y_star.reward != 1) {
    throw ContractError("build_wrong_prompt: needs a correct reference and a wrong rollout");
  }
  return prompts::render(prompts::kWrongRolloutTemplate, {{"system", std::string(prompts::kReflectorSystem)},
                                                          {"problem", solver_problem_text(problem)},
                                                          {"correct_rollout", y_star.text},
                                                          {"wrong_rollout", y_minus.text},
                                                          {"answer", problem.answer}});
}

std::string build_correct_prompt(const Problem& problem, const Rollout& y_plus) {
  if (y_plus.reward != 1) throw ContractError("build_correct_prompt: rollout is not correct");
  return prompts::render(prompts::kCorrectRolloutTemplate, {{"system", std::string(prompts::kReflectorSystem)},
                                                            {"problem", solver_problem_text(problem)},
                                                            {"correct_rollout", y_plus.text},
                                                            {"answer", problem.answer}});
}

ParsedReflection parse_reflection(std::string_view raw, ReflectionKind kind) {
  const auto explanation = tag_content(raw, "explanation");
  if (explanation.index() == 1) return ReflectionParseFailure{std::string(raw), std::get<1>(explanation)};
  Reflection r;
  r.kind = kind;
  r.provenance = Provenance::Model;
  r.key_idea = std::get<0>(explanation);
  if (kind == ReflectionKind::WrongRollout) {
    const auto quote = tag_content(raw, "error_quote");
    if (quote.index() == 1) return ReflectionParseFailure{std::string(raw), std::get<1>(quote)};
    r.error_quote = std::get<0>(quote);
  }
  return r;
}

TeacherContext build_teacher_context(const Problem& problem, std::string_view key_idea) {
  if (trim(key_idea).empty()) throw ContractError("build_teacher_context: key idea must be non-empty");
  return {prompts::render(prompts::kTeacherTemplate, {{"system", std::string(prompts::kSolverSystem)},
                                                      {"problem", solver_problem_text(problem)},
                                                      {"key_idea", std::string(key_idea)}})};
}

std::vector<std::optional<Reflection>> run_reflector(ReflectorMode mode, const PolicyModel* reflector,
                                                     const Problem& problem, const RolloutGroup& group,
                                                     const ReflectorSettings& settings) {
  std::vector<std::optional<Reflection>> out(group.rollouts.size());
  const auto reference = select_reference(group);

  if (mode == ReflectorMode::Oracle) {
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const auto& r = group.rollouts[i];
      Reflection refl;
      refl.problem_id = problem.id;
      refl.source_rollout = static_cast<int>(i);
      refl.provenance = Provenance::Oracle;
      if (r.reward == 1) {
        refl.kind = ReflectionKind::CorrectRollout;
        refl.key_idea = oracle_valid_idea(problem);
      } else {
        if (!reference) continue;
        refl.kind = ReflectionKind::WrongRollout;
        if (const auto finding = oracle_first_error(problem, r)) {
          refl.key_idea = finding->idea;
          refl.error_quote = finding->quote;
        } else {
          refl.key_idea = "The final answer should be " + problem.answer + ".";
        }
      }
      out[i] = std::move(refl);
    }
    return out;
  }

  if (reflector == nullptr) throw ConfigError("run_reflector: MODEL mode needs a reflector model");
  std::vector<std::string> prompts_text;
  std::vector<std::size_t> who;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& r = group.rollouts[i];
    std::string p;
    if (r.reward == 1) {
      p = build_correct_prompt(problem, r);
    } else if (reference) {
      p = build_wrong_prompt(problem, group.rollouts[static_cast<std::size_t>(*reference)], r);
    } else {
      continue;
    }
    if (prefix_length(p) > std::min(settings.max_prompt_tokens, reflector->config().context - 1)) continue;
    prompts_text.push_back(std::move(p));
    who.push_back(i);
  }
  if (prompts_text.empty()) return out;
  const auto raws = generate_greedy_batch(*reflector, prompts_text, settings.max_output_tokens);
  for (std::size_t j = 0; j < who.size(); ++j) {
    const std::size_t i = who[j];
    const auto kind = group.rollouts[i].reward == 1 ? ReflectionKind::CorrectRollout : ReflectionKind::WrongRollout;
    auto parsed = parse_reflection(raws[j], kind);
    Reflection refl;
    if (auto* ok = std::get_if<Reflection>(&parsed)) {
      refl = std::move(*ok);
    } else {
      const std::string fallback = trim(raws[j]);
      if (fallback.empty()) continue;
      refl.kind = kind;
      refl.key_idea = fallback;
      refl.parse_failed = true;
    }
    refl.provenance = Provenance::Model;
    refl.problem_id = problem.id;
    refl.source_rollout = static_cast<int>(i);
    out[i] = std::move(refl);
  }
  return out;
}

void to_json(nlohmann::json& j, const Reflection& r) {
  j = nlohmann::json{{"problem_id", r.problem_id},
                     {"source_rollout", r.source_rollout},
                     {"kind", to_string(r.kind)},
                     {"provenance", to_string(r.provenance)},
                     {"key_idea", r.key_idea},
                     {"error_quote", r.error_quote ? nlohmann::json(*r.error_quote) : nlohmann::json(nullptr)},
                     {"parse_failed", r.parse_failed}};
}

}  // namespace rosd
