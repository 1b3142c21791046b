#include "rosd/prompts.hpp"

#include "rosd/errors.hpp"

namespace rosd::prompts {

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw InputError("unterminated placeholder in template");
    out.append(tmpl.substr(pos, open - pos));
    const std::string name(tmpl.substr(open + 1, close - open - 1));
    const auto it = values.find(name);
    if (it == values.end()) throw InputError("no value for template placeholder {" + name + "}");
    out += it->second;
    pos = close + 1;
  }
  return out;
}

std::string student_context(const Problem& problem) {
  return render(kStudentTemplate, {{"system", std::string(kSolverSystem)}, {"problem", problem.prompt}});
}

std::vector<std::string> template_fragments() {
  std::vector<std::string> out;
  for (std::string_view tmpl : {kStudentTemplate, kTeacherTemplate, kWrongRolloutTemplate, kCorrectRolloutTemplate}) {
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
      const auto open = tmpl.find('{', pos);
      const auto piece = tmpl.substr(pos, open == std::string_view::npos ? std::string_view::npos : open - pos);
      if (piece.size() > 1) out.emplace_back(piece);
      if (open == std::string_view::npos) break;
      pos = tmpl.find('}', open) + 1;
    }
  }
  out.emplace_back(kSolverSystem);
  out.emplace_back(kReflectorSystem);
  return out;
}

}  // namespace rosd::prompts
