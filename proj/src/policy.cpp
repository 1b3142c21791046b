#include "rosd/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "rosd/errors.hpp"
#include "rosd/prompts.hpp"
#include "rosd/rng.hpp"

namespace rosd {

namespace {

using Net = PolicyModel::Net;

// Samples from softmax(logits / temperature); returns (token, log-probability).
std::pair<TokenId, double> sample_token(const float* logits, int vocab, double temperature, Rng& rng) {
  std::vector<double> z(static_cast<std::size_t>(vocab));
  double mx = -1e300;
  for (int v = 0; v < vocab; ++v) {
    z[static_cast<std::size_t>(v)] = static_cast<double>(logits[v]) / temperature;
    mx = std::max(mx, z[static_cast<std::size_t>(v)]);
  }
  double sum = 0.0;
  for (auto& x : z) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  const double u = rng.uniform();
  double acc = 0.0;
  TokenId pick = vocab - 1;
  for (int v = 0; v < vocab; ++v) {
    acc += std::exp(z[static_cast<std::size_t>(v)] - lse);
    if (u < acc) {
      pick = v;
      break;
    }
  }
  return {pick, z[static_cast<std::size_t>(pick)] - lse};
}

std::vector<TokenId> prefix_ids(std::string_view context) {
  std::vector<TokenId> ids{Tokenizer::kBos};
  const auto body = grammar_tokenizer().encode_ids(context);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Tokenizer::kSep);
  return ids;
}

// Runs each prefix through its own decode state; returns the logits row after the last token.
std::vector<std::vector<float>> prefill(const Net& net, const std::vector<std::vector<TokenId>>& prefixes,
                                        std::vector<Net::DecodeState>& states) {
  const std::size_t n = prefixes.size();
  states.clear();
  for (std::size_t i = 0; i < n; ++i) states.push_back(net.new_state());
  std::vector<std::vector<float>> last(n);
  std::size_t longest = 0;
  for (const auto& p : prefixes) longest = std::max(longest, p.size());
  for (std::size_t pos = 0; pos < longest; ++pos) {
    std::vector<Net::DecodeState*> active;
    std::vector<TokenId> toks;
    std::vector<std::size_t> who;
    for (std::size_t i = 0; i < n; ++i) {
      if (pos < prefixes[i].size()) {
        active.push_back(&states[i]);
        toks.push_back(prefixes[i][pos]);
        who.push_back(i);
      }
    }
    const auto logits = net.step(active, toks);
    for (std::size_t r = 0; r < who.size(); ++r) {
      if (pos + 1 == prefixes[who[r]].size()) {
        last[who[r]].assign(logits.row(static_cast<Eigen::Index>(r)).data(),
                            logits.row(static_cast<Eigen::Index>(r)).data() + logits.cols());
      }
    }
  }
  return last;
}

}  // namespace

std::string to_string(Role r) {
  switch (r) {
    case Role::Student: return "STUDENT";
    case Role::Teacher: return "TEACHER";
    case Role::Reflector: return "REFLECTOR";
  }
  return "STUDENT";
}

Role parse_role(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "STUDENT") return Role::Student;
  if (n == "TEACHER") return Role::Teacher;
  if (n == "REFLECTOR") return Role::Reflector;
  throw ConfigError("unknown model role: " + std::string(name));
}

const Tokenizer& grammar_tokenizer() {
  static const Tokenizer tok = Tokenizer::task_grammar();
  return tok;
}

ModelConfig default_model_config() {
  ModelConfig c;
  c.vocab = grammar_tokenizer().size();
  c.layers = 2;
  c.width = 64;
  c.heads = 4;
  c.mlp = 256;
  c.context = 512;
  return c;
}

PolicyModel::PolicyModel(const ModelConfig& config, Role role) : net_(config), role_(role) {}

PolicyModel PolicyModel::random(const ModelConfig& config, std::uint64_t seed, Role role) {
  PolicyModel m(config, role);
  m.net_.init(seed);
  return m;
}

PolicyModel PolicyModel::snapshot(Role role) const {
  PolicyModel copy = *this;
  copy.role_ = role;
  return copy;
}

std::uint64_t PolicyModel::parameter_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto& p = net_.params();
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < p.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

RolloutGroup make_group(const Problem& problem, std::vector<Rollout> rollouts) {
  RolloutGroup g;
  g.problem_id = problem.id;
  g.rollouts = std::move(rollouts);
  for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
    (g.rollouts[i].reward == 1 ? g.correct : g.wrong).push_back(static_cast<int>(i));
  }
  return g;
}

int prefix_length(std::string_view context) {
  return static_cast<int>(grammar_tokenizer().encode_ids(context).size()) + 2;
}

std::vector<TokenId> model_input(std::string_view context, std::span<const TokenId> response) {
  auto ids = prefix_ids(context);
  ids.insert(ids.end(), response.begin(), response.end());
  return ids;
}

std::vector<RolloutGroup> sample_groups(const PolicyModel& model, std::span<const Problem> problems,
                                        const SamplingSpec& spec, std::uint64_t seed) {
  if (spec.group_size < 2) throw ConfigError("sample_rollouts: G must be >= 2");
  return sample_responses(model, problems, spec, seed);
}

std::vector<RolloutGroup> sample_responses(const PolicyModel& model, std::span<const Problem> problems,
                                           const SamplingSpec& spec, std::uint64_t seed) {
  if (spec.group_size < 1) throw ConfigError("sample_responses: need at least one sample per problem");
  if (!(spec.temperature > 0.0)) throw ConfigError("sample_rollouts: temperature must be > 0");
  if (spec.max_len < 1) throw ConfigError("sample_rollouts: max_len must be >= 1");
  const Net& net = model.net();
  const int ctx = net.config().context;
  const int vocab = net.config().vocab;
  const Tokenizer& tok = grammar_tokenizer();

  std::vector<std::vector<TokenId>> prefixes;
  for (const auto& p : problems) {
    prefixes.push_back(prefix_ids(prompts::student_context(p)));
    if (static_cast<int>(prefixes.back().size()) >= ctx) {
      throw InputError("prompt of problem " + p.id + " does not fit the model context");
    }
  }
  std::vector<Net::DecodeState> base;
  const auto first = prefill(net, prefixes, base);

  const std::size_t G = static_cast<std::size_t>(spec.group_size);
  const std::size_t total = problems.size() * G;
  std::vector<Net::DecodeState> states;
  states.reserve(total);
  std::vector<std::vector<float>> logits;
  std::vector<Rng> rngs;
  std::vector<Rollout> rollouts(total);
  for (std::size_t p = 0; p < problems.size(); ++p) {
    for (std::size_t g = 0; g < G; ++g) {
      states.push_back(base[p]);
      logits.push_back(first[p]);
      rngs.emplace_back(derive_seed({seed, p, g}));
      auto& r = rollouts[p * G + g];
      r.problem_id = problems[p].id;
      r.index = static_cast<int>(g);
    }
  }

  std::vector<std::size_t> active(total);
  for (std::size_t i = 0; i < total; ++i) active[i] = i;
  while (!active.empty()) {
    std::vector<std::size_t> next;
    std::vector<TokenId> toks;
    for (std::size_t i : active) {
      auto [token, lp] = sample_token(logits[i].data(), vocab, spec.temperature, rngs[i]);
      auto& r = rollouts[i];
      r.token_ids.push_back(token);
      r.sample_logprobs.push_back(lp);
      const bool done = token == Tokenizer::kEos || r.length() >= spec.max_len || states[i].length >= ctx;
      if (!done) {
        next.push_back(i);
        toks.push_back(token);
      }
    }
    if (!next.empty()) {
      std::vector<Net::DecodeState*> ptrs;
      for (std::size_t i : next) ptrs.push_back(&states[i]);
      const auto out = net.step(ptrs, toks);
      for (std::size_t r = 0; r < next.size(); ++r) {
        const float* row = out.row(static_cast<Eigen::Index>(r)).data();
        logits[next[r]].assign(row, row + vocab);
      }
    }
    active = std::move(next);
  }

  std::vector<RolloutGroup> groups;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    std::vector<Rollout> rs;
    for (std::size_t g = 0; g < G; ++g) {
      auto& r = rollouts[p * G + g];
      r.text = tok.decode(r.token_ids);
      r.offsets = tok.offsets_of(r.token_ids);
      r.reward = verify(problems[p], r.text).reward;
      rs.push_back(std::move(r));
    }
    groups.push_back(make_group(problems[p], std::move(rs)));
  }
  return groups;
}

RolloutGroup sample_rollouts(const PolicyModel& model, const Problem& problem, int G, double temperature, int max_len,
                             std::uint64_t seed) {
  SamplingSpec spec{G, temperature, max_len};
  return std::move(sample_groups(model, std::span<const Problem>(&problem, 1), spec, seed).front());
}

std::vector<std::string> generate_greedy_batch(const PolicyModel& model, std::span<const std::string> contexts,
                                               int max_new_tokens) {
  const Net& net = model.net();
  const int ctx = net.config().context;
  std::vector<std::vector<TokenId>> prefixes;
  for (const auto& c : contexts) {
    prefixes.push_back(prefix_ids(c));
    if (static_cast<int>(prefixes.back().size()) >= ctx) {
      throw InputError("generate_greedy: context does not fit the model");
    }
  }
  std::vector<Net::DecodeState> states;
  auto rows = prefill(net, prefixes, states);
  std::vector<std::vector<TokenId>> outs(contexts.size());
  std::vector<std::size_t> active(contexts.size());
  for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;
  while (!active.empty()) {
    std::vector<std::size_t> next;
    std::vector<TokenId> toks;
    for (std::size_t i : active) {
      if (static_cast<int>(outs[i].size()) >= max_new_tokens || states[i].length >= ctx) continue;
      const auto best = static_cast<TokenId>(std::max_element(rows[i].begin(), rows[i].end()) - rows[i].begin());
      if (best == Tokenizer::kEos) continue;
      outs[i].push_back(best);
      next.push_back(i);
      toks.push_back(best);
    }
    if (next.empty()) break;
    std::vector<Net::DecodeState*> ptrs;
    for (std::size_t i : next) ptrs.push_back(&states[i]);
    const auto logits = net.step(ptrs, toks);
    for (std::size_t r = 0; r < next.size(); ++r) {
      const float* row = logits.row(static_cast<Eigen::Index>(r)).data();
      rows[next[r]].assign(row, row + logits.cols());
    }
    active = std::move(next);
  }
  std::vector<std::string> texts;
  for (const auto& o : outs) texts.push_back(grammar_tokenizer().decode(o));
  return texts;
}

std::string generate_greedy(const PolicyModel& model, std::string_view context, int max_new_tokens) {
  const std::vector<std::string> one{std::string(context)};
  return generate_greedy_batch(model, one, max_new_tokens).front();
}

namespace {

std::vector<std::vector<double>> response_logits(const PolicyModel& model, std::string_view context,
                                                 const Rollout& rollout, double temperature) {
  const std::vector<std::vector<TokenId>> seqs{model_input(context, rollout.token_ids)};
  const auto logits = model.net().forward(seqs, nullptr);
  const int start = prefix_length(context) - 1;
  std::vector<std::vector<double>> out;
  for (int t = 0; t < rollout.length(); ++t) {
    std::vector<double> z(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index v = 0; v < logits.cols(); ++v) z[static_cast<std::size_t>(v)] = logits(start + t, v) / temperature;
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace

std::vector<TokenDistribution> next_token_distributions(const PolicyModel& model, std::string_view context,
                                                        const Rollout& rollout, double temperature) {
  std::vector<TokenDistribution> out;
  for (const auto& z : response_logits(model, context, rollout, temperature)) {
    out.push_back(TokenDistribution::from_logits(z));
  }
  return out;
}

std::vector<double> rollout_logprobs(const PolicyModel& model, std::string_view context, const Rollout& rollout,
                                     double temperature) {
  std::vector<double> out;
  const auto rows = response_logits(model, context, rollout, temperature);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const auto& z = rows[t];
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double x : z) sum += std::exp(x - mx);
    out.push_back(z[static_cast<std::size_t>(rollout.token_ids[t])] - mx - std::log(sum));
  }
  return out;
}

void ema_update(PolicyModel& teacher, const PolicyModel& student, double tau) {
  if (!(teacher.config() == student.config())) throw ConfigError("ema_update: architecture mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("ema_update: tau must lie in [0, 1]");
  auto& t = teacher.net().params();
  const auto& s = student.net().params();
  const auto a = static_cast<float>(tau);
  const auto b = static_cast<float>(1.0 - tau);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * t[i] + b * s[i];
}

std::optional<OracleFinding> oracle_first_error(const Problem& problem, const Rollout& rollout) {
  return oracle_first_error(problem, rollout.text, rollout.reward);
}

}  // namespace rosd
