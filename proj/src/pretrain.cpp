#include "rosd/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "rosd/errors.hpp"
#include "rosd/prompts.hpp"
#include "rosd/reflect.hpp"

namespace rosd {

namespace {

constexpr std::string_view kLetters = "abcdef";

int mod7(int v) { return ((v % kArithModulus) + kArithModulus) % kArithModulus; }

// Step label with its input value replaced, and the value the step produces from that input.
std::pair<std::string, std::string> replay_step(Family family, const std::string& label, const std::string& input) {
  if (family == Family::ArithChain) {
    // "(v op a) mod 7"
    std::size_t i = 1;
    while (i < label.size() && std::isdigit(static_cast<unsigned char>(label[i]))) ++i;
    const char op = label[i];
    const auto close = label.find(')', i);
    const int a = std::stoi(label.substr(i + 1, close - i - 1));
    const int v = std::stoi(input);
    const int out = op == '+' ? mod7(v + a) : op == '-' ? mod7(v - a) : mod7(v * a);
    return {"(" + input + label.substr(i), std::to_string(out)};
  }
  const auto open = label.find('(');
  const std::string fn = label.substr(0, open);
  std::string out = input;
  std::string rest = ")";
  if (fn == "rev") {
    std::reverse(out.begin(), out.end());
  } else if (fn == "rot") {
    std::rotate(out.begin(), out.begin() + 1, out.end());
  } else {
    const auto comma = label.find(',', open);
    rest = label.substr(comma);
    std::replace(out.begin(), out.end(), label[comma + 1], label[comma + 3]);
  }
  return {fn + "(" + input + rest, out};
}

std::string initial_value(Family family, const std::string& first_label) {
  if (family == Family::ArithChain) {
    std::size_t i = 1;
    while (i < first_label.size() && std::isdigit(static_cast<unsigned char>(first_label[i]))) ++i;
    return first_label.substr(1, i - 1);
  }
  const auto open = first_label.find('(');
  auto end = first_label.find_first_of(",)", open);
  return first_label.substr(open + 1, end - open - 1);
}

std::string corrupt(Family family, const std::string& value, Rng& rng) {
  if (family == Family::ArithChain) {
    const int v = std::stoi(value);
    return std::to_string(mod7(v + 1 + static_cast<int>(rng.below(kArithModulus - 1))));
  }
  std::string out = value;
  const auto pos = rng.below(out.size());
  char c = out[pos];
  while (c == out[pos]) c = kLetters[rng.below(kLetters.size())];
  out[pos] = c;
  return out;
}

const Problem& pick(const PretrainConfig& config, const std::vector<Problem>& arith, const std::vector<Problem>& strings,
                    Rng& rng) {
  const auto& pool = rng.uniform() < config.arith_fraction ? arith : strings;
  return pool[rng.below(pool.size())];
}

}  // namespace

std::string noisy_solution(const Problem& problem, double noise, Rng& rng, int clean_through) {
  std::string value = initial_value(problem.family, problem.step_trace.front().label);
  std::string out;
  for (std::size_t i = 0; i < problem.step_trace.size(); ++i) {
    auto [label, next] = replay_step(problem.family, problem.step_trace[i].label, value);
    if (static_cast<int>(i) + 1 > clean_through && rng.uniform() < noise) next = corrupt(problem.family, next, rng);
    out += render_step_line(static_cast<int>(i) + 1, TraceStep{label, next}) + "\n";
    value = next;
  }
  return out + "ANSWER: " + value;
}

Example sample_example(const PretrainConfig& config, const std::vector<Problem>& arith,
                       const std::vector<Problem>& strings, Rng& rng) {
  const Problem& p = pick(config, arith, strings, rng);
  const double total = config.w_student + config.w_hint + config.w_valid + config.w_reference + config.w_reflect;
  double u = rng.uniform() * total;
  if ((u -= config.w_student) < 0) return {prompts::student_context(p), noisy_solution(p, config.student_noise, rng)};
  if ((u -= config.w_hint) < 0) {
    const int n = static_cast<int>(p.step_trace.size());
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n + 1)));
    std::string idea;
    if (j == n) {
      idea = rng.uniform() < 0.5 ? "The final answer should be " + p.answer + "."
                                 : "There are only " + std::to_string(n) + " steps and the answer is " + p.answer + ".";
    } else {
      idea = "The value in STEP " + std::to_string(j + 1) + " should be " + p.step_trace[static_cast<std::size_t>(j)].expected + ".";
    }
    return {build_teacher_context(p, idea).text, noisy_solution(p, config.hint_noise, rng, j + 1)};
  }
  if ((u -= config.w_valid) < 0) {
    return {build_teacher_context(p, oracle_valid_idea(p)).text, noisy_solution(p, config.hint_noise, rng)};
  }
  if ((u -= config.w_reference) < 0) {
    const std::string reference = render_solution(p);
    return {build_teacher_context(p, reference).text, reference};
  }
  // Reflector-format example built from oracle findings.
  Rollout star;
  star.text = render_solution(p);
  star.reward = 1;
  Rollout minus;
  minus.reward = 0;
  for (int tries = 0; tries < 16; ++tries) {
    minus.text = noisy_solution(p, std::max(config.student_noise, 0.5), rng);
    if (verify(p, minus.text).reward == 0) break;
  }
  if (verify(p, minus.text).reward == 1 || rng.uniform() < 0.3) {
    return {build_correct_prompt(p, star), "<explanation>" + oracle_valid_idea(p) + "</explanation>"};
  }
  const auto finding = oracle_first_error(p, minus.text, 0);
  return {build_wrong_prompt(p, star, minus),
          "<error_quote>" + finding->quote + "</error_quote>\n<explanation>" + finding->idea + "</explanation>"};
}

double supervised_loss(const PolicyModel& model, const std::vector<Example>& batch, std::vector<float>& grad) {
  using Net = PolicyModel::Net;
  const Tokenizer& tok = grammar_tokenizer();
  std::vector<std::vector<TokenId>> seqs;
  std::vector<int> starts;
  std::vector<std::vector<TokenId>> targets;
  int total_targets = 0;
  for (const auto& ex : batch) {
    auto response = tok.encode_ids(ex.response);
    response.push_back(Tokenizer::kEos);
    seqs.push_back(model_input(ex.context, response));
    if (static_cast<int>(seqs.back().size()) > model.config().context) {
      throw InputError("pretraining example longer than the model context");
    }
    starts.push_back(prefix_length(ex.context) - 1);
    total_targets += static_cast<int>(response.size());
    targets.push_back(std::move(response));
  }
  Net::Cache cache;
  Net::Mat logits = model.net().forward(seqs, &cache);
  Net::Mat dlogits = Net::Mat::Zero(logits.rows(), logits.cols());
  double loss = 0.0;
  const float inv = 1.0f / static_cast<float>(total_targets);
  Eigen::Index row0 = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (std::size_t t = 0; t < targets[s].size(); ++t) {
      const Eigen::Index r = row0 + starts[s] + static_cast<Eigen::Index>(t);
      const auto row = logits.row(r);
      const float mx = row.maxCoeff();
      const auto e = (row.array() - mx).exp();
      const float sum = e.sum();
      loss -= static_cast<double>(row(targets[s][t]) - mx - std::log(sum));
      dlogits.row(r) = e / sum * inv;
      dlogits(r, targets[s][t]) -= inv;
    }
    row0 += static_cast<Eigen::Index>(seqs[s].size());
  }
  model.net().backward(cache, dlogits, grad);
  return loss / total_targets;
}

PolicyModel pretrain(const ModelConfig& model_config, const PretrainConfig& config, const PretrainLogger& log) {
  if (config.steps < 1 || config.batch < 1) throw ConfigError("pretrain: steps and batch must be >= 1");
  if (config.clean_steps < 0) throw ConfigError("pretrain: clean_steps must be >= 0");
  PolicyModel model = PolicyModel::random(model_config, derive_seed({config.seed, 1}));
  const auto arith = generate_problems(Family::ArithChain, derive_seed({config.seed, 2}), config.pool_size);
  const auto strings = generate_problems(Family::StringTransform, derive_seed({config.seed, 3}), config.pool_size);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  oc.lr = config.lr;
  oc.clip_norm = config.clip_norm;
  Optimizer opt(oc, model.net().num_params());
  Rng rng(derive_seed({config.seed, 4}));
  std::vector<float> grad(model.net().num_params());
  PretrainConfig clean = config;
  clean.student_noise = 0.0;
  clean.hint_noise = 0.0;
  double running = 0.0;
  for (int step = 1; step <= config.steps; ++step) {
    const PretrainConfig& mix = step <= config.clean_steps ? clean : config;
    std::vector<Example> batch;
    for (int i = 0; i < config.batch; ++i) batch.push_back(sample_example(mix, arith, strings, rng));
    std::fill(grad.begin(), grad.end(), 0.0f);
    const double loss = supervised_loss(model, batch, grad);
    double scale = 1.0;
    if (step <= config.warmup) {
      scale = static_cast<double>(step) / config.warmup;
    } else {
      const double progress = static_cast<double>(step - config.warmup) / std::max(1, config.steps - config.warmup);
      scale = 0.1 + 0.45 * (1.0 + std::cos(M_PI * progress));
    }
    opt.step(model.net().params(), grad, scale);
    running += loss;
    if (log && (step % config.log_every == 0 || step == config.steps)) {
      const int span = step % config.log_every == 0 ? config.log_every : step % config.log_every;
      log(step, running / span);
      running = 0.0;
    } else if (step % config.log_every == 0) {
      running = 0.0;
    }
  }
  return model;
}

}  // namespace rosd
