#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/tasks.hpp"

namespace rosd::prompts {

/// Bumped whenever any template text below changes; golden tests pin v1.
inline constexpr std::string_view kTemplateVersion = "v1";

inline constexpr std::string_view kSolverSystem =
    "Solve the problem step by step. Write each STEP line, then the ANSWER line.";

inline constexpr std::string_view kStudentTemplate = "[System] {system}\n[User] {problem}\n[Assistant]";

inline constexpr std::string_view kTeacherTemplate =
    "[System] {system}\n[User] {problem}\n"
    "The following is the key idea to solve the question:\n{key_idea}\n"
    "Correctly solve the original question.\n[Assistant]";

inline constexpr std::string_view kReflectorSystem =
    "You are a careful tutor. Respond strictly in the required format and nothing else.";

inline constexpr std::string_view kWrongRolloutTemplate =
    "[System] {system}\n[User] [Problem] {problem}\n[Correct Solution] {correct_rollout}\n"
    "[Incorrect Solution] {wrong_rollout}\n"
    "The correct final answer is {answer}. Diagnose the [Incorrect Solution] by responding strictly in the "
    "following format:\n"
    "<error_quote>(Extract the EXACT substring from the [Incorrect Solution] where the reasoning first goes "
    "wrong)</error_quote>\n"
    "<explanation>(Explain the exact mistake in the quote, how to fix it, and what the correct logic is)"
    "</explanation>\n[Assistant]";

inline constexpr std::string_view kCorrectRolloutTemplate =
    "[System] {system}\n[User] [Problem] {problem}\n[Correct Solution] {correct_rollout}\n"
    "Explain why this reasoning is valid and why the final answer should be {answer}. Respond strictly in the "
    "following format:\n"
    "<explanation>(Your explanation of why the logic is correct)</explanation>\n[Assistant]";

/// Replaces every "{name}" with values.at(name). Unknown placeholders throw InputError.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Conditioning text for student rollouts and evaluation.
std::string student_context(const Problem& problem);

/// Literal text pieces of all templates between placeholders; the tokenizer keeps each
/// as a single token.
std::vector<std::string> template_fragments();

}  // namespace rosd::prompts
