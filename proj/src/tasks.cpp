#include "rosd/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

#include "rosd/errors.hpp"
#include "rosd/rng.hpp"

namespace rosd {

namespace {

constexpr std::string_view kLetters = "abcdef";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<long long> parse_integer(std::string_view s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int apply_mod(char op, int a, int b) {
  int v = 0;
  switch (op) {
    case '+': v = a + b; break;
    case '-': v = a - b; break;
    default: v = a * b; break;
  }
  return ((v % kArithModulus) + kArithModulus) % kArithModulus;
}

Problem make_arith(Rng& rng, std::uint64_t seed) {
  static constexpr char kOps[] = {'+', '-', '*'};
  const int steps = rng.between(3, 6);
  Problem p;
  p.family = Family::ArithChain;
  p.seed = seed;
  int value = rng.between(0, 9);
  std::string expr = std::string(static_cast<std::size_t>(steps), '(') + std::to_string(value);
  for (int i = 0; i < steps; ++i) {
    const char op = kOps[rng.below(3)];
    const int operand = op == '*' ? rng.between(2, 9) : rng.between(1, 9);
    expr += op + std::to_string(operand) + ")";
    const int next = apply_mod(op, value, operand);
    std::string label = "(" + std::to_string(value) + op + std::to_string(operand) + ") mod " +
                        std::to_string(kArithModulus);
    p.step_trace.push_back({std::move(label), std::to_string(next)});
    value = next;
  }
  p.prompt = "Compute " + expr + " mod " + std::to_string(kArithModulus) + ".";
  p.answer = std::to_string(value);
  return p;
}

std::string random_word(Rng& rng, int len) {
  std::string s;
  for (int i = 0; i < len; ++i) s += kLetters[rng.below(kLetters.size())];
  return s;
}

Problem make_string(Rng& rng, std::uint64_t seed) {
  const int steps = rng.between(3, 6);
  Problem p;
  p.family = Family::StringTransform;
  p.seed = seed;
  std::string value = random_word(rng, rng.between(3, 4));
  std::string expr = value;
  for (int i = 0; i < steps; ++i) {
    const auto kind = rng.below(3);
    std::string label;
    std::string next = value;
    if (kind == 0) {
      std::reverse(next.begin(), next.end());
      label = "rev(" + value + ")";
      expr = "rev(" + expr + ")";
    } else if (kind == 1) {
      std::rotate(next.begin(), next.begin() + 1, next.end());
      label = "rot(" + value + ")";
      expr = "rot(" + expr + ")";
    } else {
      const char from = value[rng.below(value.size())];
      char to = from;
      while (to == from) to = kLetters[rng.below(kLetters.size())];
      std::replace(next.begin(), next.end(), from, to);
      const std::string args = std::string(",") + from + "," + to + ")";
      label = "sub(" + value + args;
      expr = "sub(" + expr + args;
    }
    p.step_trace.push_back({std::move(label), next});
    value = std::move(next);
  }
  p.prompt = "Compute " + expr + ".";
  p.answer = value;
  return p;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(start));
      break;
    }
    lines.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

constexpr std::string_view kAnswerMarker = "ANSWER:";

}  // namespace

std::string to_string(Family family) {
  return family == Family::ArithChain ? "ARITH_CHAIN" : "STRING_TRANSFORM";
}

Family parse_family(std::string_view name) {
  const std::string n = lower(trim(name));
  if (n == "arith_chain" || n == "arith") return Family::ArithChain;
  if (n == "string_transform" || n == "string") return Family::StringTransform;
  throw ConfigError("unknown task family: " + std::string(name));
}

std::vector<Family> all_families() { return {Family::ArithChain, Family::StringTransform}; }

std::vector<Problem> generate_problems(Family family, std::uint64_t seed, int n) {
  if (n < 1) throw ConfigError("generate_problems: n must be >= 1, got " + std::to_string(n));
  Rng rng(derive_seed({static_cast<std::uint64_t>(family) + 1, seed}));
  std::vector<Problem> out;
  std::set<std::string> seen;
  const std::string prefix = family == Family::ArithChain ? "arith-" : "string-";
  while (static_cast<int>(out.size()) < n) {
    Problem p = family == Family::ArithChain ? make_arith(rng, seed) : make_string(rng, seed);
    if (!seen.insert(p.prompt).second) continue;
    p.id = prefix + std::to_string(seed) + "-" + std::to_string(out.size());
    out.push_back(std::move(p));
  }
  return out;
}

std::string render_step_line(int index, const TraceStep& step) {
  return "STEP " + std::to_string(index) + ": " + step.label + " = " + step.expected;
}

std::string render_solution(const Problem& problem) {
  std::string out;
  for (std::size_t i = 0; i < problem.step_trace.size(); ++i) {
    out += render_step_line(static_cast<int>(i) + 1, problem.step_trace[i]) + "\n";
  }
  out += std::string(kAnswerMarker) + " " + problem.answer;
  return out;
}

std::string canonical_answer(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool answers_match(std::string_view a, std::string_view b) {
  const std::string ca = canonical_answer(a);
  const std::string cb = canonical_answer(b);
  const auto ia = parse_integer(ca);
  const auto ib = parse_integer(cb);
  if (ia && ib) return *ia == *ib;
  return !ca.empty() && ca == cb;
}

std::optional<std::string> extract_answer(std::string_view response) {
  std::optional<std::string> found;
  for (const auto& line : split_lines(response)) {
    const std::string t = trim(line);
    if (t.rfind(kAnswerMarker, 0) == 0) found = trim(std::string_view(t).substr(kAnswerMarker.size()));
  }
  return found;
}

VerifierResult verify(const Problem& problem, std::string_view response_text) {
  VerifierResult r;
  r.extracted_answer = extract_answer(response_text);
  r.reward = r.extracted_answer && answers_match(*r.extracted_answer, problem.answer) ? 1 : 0;
  return r;
}

std::optional<ParsedStepLine> parse_step_line(std::string_view line) {
  constexpr std::string_view kStep = "STEP ";
  if (line.rfind(kStep, 0) != 0) return std::nullopt;
  std::size_t pos = kStep.size();
  std::size_t digits = pos;
  while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
  if (digits == pos || digits + 1 >= line.size() || line[digits] != ':' || line[digits + 1] != ' ') return std::nullopt;
  const auto index = parse_integer(line.substr(pos, digits - pos));
  const std::string_view rest = line.substr(digits + 2);
  const auto eq = rest.rfind(" = ");
  if (eq == std::string_view::npos || eq == 0) return std::nullopt;
  ParsedStepLine out;
  out.index = static_cast<int>(*index);
  out.expr = std::string(rest.substr(0, eq));
  out.value = trim(rest.substr(eq + 3));
  if (out.value.empty()) return std::nullopt;
  return out;
}

std::optional<OracleFinding> oracle_first_error(const Problem& problem, std::string_view response_text, int reward) {
  if (reward != 0) throw ContractError("oracle_first_error called on a correct rollout");
  const auto lines = split_lines(response_text);
  const bool any_step = std::any_of(lines.begin(), lines.end(),
                                    [](const std::string& l) { return parse_step_line(l).has_value(); });
  if (!any_step) return std::nullopt;

  std::size_t step_no = 0;
  for (const auto& line : lines) {
    if (trim(line).empty()) continue;
    if (const auto parsed = parse_step_line(line)) {
      if (step_no >= problem.step_trace.size()) {
        return OracleFinding{line, "There are only " + std::to_string(problem.step_trace.size()) +
                                       " steps and the answer is " + problem.answer + "."};
      }
      const auto& expected = problem.step_trace[step_no];
      ++step_no;
      if (!answers_match(parsed->value, expected.expected)) {
        return OracleFinding{line, "The value in STEP " + std::to_string(step_no) + " should be " +
                                       expected.expected + "."};
      }
      continue;
    }
    if (trim(line).rfind(kAnswerMarker, 0) == 0) {
      if (step_no < problem.step_trace.size()) {
        const auto& expected = problem.step_trace[step_no];
        return OracleFinding{line, "The value in STEP " + std::to_string(step_no + 1) + " should be " +
                                       expected.expected + "."};
      }
      return OracleFinding{line, "The final answer should be " + problem.answer + "."};
    }
    // Any other non-empty line breaks the step grammar.
    const std::size_t next = std::min(step_no, problem.step_trace.size() - 1);
    return OracleFinding{line, "The value in STEP " + std::to_string(next + 1) + " should be " +
                                   problem.step_trace[next].expected + "."};
  }
  return std::nullopt;
}

std::string oracle_valid_idea(const Problem& problem) {
  return "The reasoning is valid and the answer is " + problem.answer + ".";
}

void to_json(nlohmann::json& j, const Problem& p) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : p.step_trace) trace.push_back({{"step_label", s.label}, {"expected_value", s.expected}});
  j = nlohmann::json{{"id", p.id},         {"family", to_string(p.family)}, {"prompt", p.prompt},
                     {"answer", p.answer}, {"step_trace", trace},          {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, Problem& p) {
  p.id = j.at("id").get<std::string>();
  p.family = parse_family(j.at("family").get<std::string>());
  p.prompt = j.at("prompt").get<std::string>();
  p.answer = j.at("answer").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.step_trace.clear();
  for (const auto& s : j.at("step_trace")) {
    p.step_trace.push_back({s.at("step_label").get<std::string>(), s.at("expected_value").get<std::string>()});
  }
  if (p.step_trace.empty() || !answers_match(p.step_trace.back().expected, p.answer)) {
    throw InputError("problem " + p.id + ": step_trace must be non-empty and end at the answer");
  }
}

std::string problems_to_jsonl(const std::vector<Problem>& problems) {
  std::string out;
  for (const auto& p : problems) out += nlohmann::json(p).dump() + "\n";
  return out;
}

std::vector<Problem> problems_from_jsonl(std::string_view text) {
  std::vector<Problem> out;
  for (const auto& line : split_lines(text)) {
    if (trim(line).empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<Problem>());
  }
  return out;
}

}  // namespace rosd
