#include "rosd/advantage.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "rosd/errors.hpp"

namespace rosd {

namespace {

void check_shapes(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                  std::span<const double> adv) {
  if (a.size() != b.size() || a.size() != adv.size() || a.empty()) {
    throw InputError("grpo_loss: rollout counts of log-probs and advantages differ");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || a[i].empty()) {
      throw InputError("grpo_loss: token/log-prob length mismatch in rollout " + std::to_string(i));
    }
  }
}

}  // namespace

std::string to_string(AdvantageMode m) { return m == AdvantageMode::StdNorm ? "STD_NORM" : "UNBIASED"; }

AdvantageMode parse_advantage_mode(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "STD_NORM") return AdvantageMode::StdNorm;
  if (n == "UNBIASED") return AdvantageMode::Unbiased;
  throw ConfigError("unknown advantage mode: " + std::string(name));
}

AdvantageResult group_advantage(std::span<const double> rewards, AdvantageMode mode, double sigma_eps) {
  if (rewards.size() < 2) throw InputError("group_advantage: need at least 2 rewards");
  AdvantageResult r;
  r.mode = mode;
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double x : rewards) sum += x;
  r.group_mean = sum / n;
  double var = 0.0;
  for (double x : rewards) var += (x - r.group_mean) * (x - r.group_mean);
  r.group_std = std::sqrt(var / n);
  const bool constant = std::all_of(rewards.begin(), rewards.end(), [&](double x) { return x == rewards[0]; });
  r.advantages.assign(rewards.size(), 0.0);
  if (constant) return r;
  const double denom = mode == AdvantageMode::StdNorm ? std::max(r.group_std, sigma_eps) : 1.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) r.advantages[i] = (rewards[i] - r.group_mean) / denom;
  return r;
}

GrpoResult grpo_loss(const std::vector<std::vector<double>>& new_logprobs,
                     const std::vector<std::vector<double>>& old_logprobs, std::span<const double> advantages,
                     double eps_low, double eps_high) {
  check_shapes(new_logprobs, old_logprobs, advantages);
  if (!(eps_low > 0.0) || !(eps_high > 0.0)) throw ConfigError("grpo_loss: clip bounds must be positive");
  const double G = static_cast<double>(new_logprobs.size());
  GrpoResult out;
  out.grad.resize(new_logprobs.size());
  double objective = 0.0;
  for (std::size_t i = 0; i < new_logprobs.size(); ++i) {
    const auto& lp = new_logprobs[i];
    const double inv_len = 1.0 / static_cast<double>(lp.size());
    const double a = advantages[i];
    out.grad[i].assign(lp.size(), 0.0);
    double rollout_sum = 0.0;
    for (std::size_t t = 0; t < lp.size(); ++t) {
      const double rho = std::exp(lp[t] - old_logprobs[i][t]);
      const double clipped = std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high);
      const double unclipped_term = rho * a;
      const double clipped_term = clipped * a;
      // min() selects the unclipped branch unless the clipped one is strictly smaller.
      if (unclipped_term <= clipped_term) {
        rollout_sum += unclipped_term;
        out.grad[i][t] = -(unclipped_term)*inv_len / G;
      } else {
        rollout_sum += clipped_term;
      }
    }
    objective += rollout_sum / static_cast<double>(lp.size());
  }
  out.loss = -objective / G;
  return out;
}

double unclipped_objective_loss(const std::vector<std::vector<double>>& new_logprobs,
                                const std::vector<std::vector<double>>& old_logprobs,
                                std::span<const double> advantages) {
  check_shapes(new_logprobs, old_logprobs, advantages);
  double objective = 0.0;
  for (std::size_t i = 0; i < new_logprobs.size(); ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < new_logprobs[i].size(); ++t) {
      s += std::exp(new_logprobs[i][t] - old_logprobs[i][t]) * advantages[i];
    }
    objective += s / static_cast<double>(new_logprobs[i].size());
  }
  return -objective / static_cast<double>(new_logprobs.size());
}

GrpoLogitsResult grpo_loss_from_logits(const std::vector<std::vector<double>>& logits, int vocab,
                                       const std::vector<std::vector<int>>& tokens,
                                       const std::vector<std::vector<double>>& old_logprobs,
                                       std::span<const double> advantages, double eps_low, double eps_high) {
  if (logits.size() != tokens.size()) throw InputError("grpo_loss_from_logits: rollout count mismatch");
  const auto V = static_cast<std::size_t>(vocab);
  std::vector<std::vector<double>> new_lp(logits.size());
  std::vector<std::vector<double>> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const std::size_t T = tokens[i].size();
    if (logits[i].size() != T * V) throw InputError("grpo_loss_from_logits: logits shape mismatch");
    new_lp[i].resize(T);
    probs[i].resize(T * V);
    for (std::size_t t = 0; t < T; ++t) {
      const double* z = logits[i].data() + t * V;
      const double mx = *std::max_element(z, z + V);
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) sum += std::exp(z[v] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t v = 0; v < V; ++v) probs[i][t * V + v] = std::exp(z[v] - lse);
      const int tok = tokens[i][t];
      if (tok < 0 || static_cast<std::size_t>(tok) >= V) throw InputError("grpo_loss_from_logits: token out of range");
      new_lp[i][t] = z[tok] - lse;
    }
  }
  const GrpoResult r = grpo_loss(new_lp, old_logprobs, advantages, eps_low, eps_high);
  GrpoLogitsResult out;
  out.loss = r.loss;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const std::size_t T = tokens[i].size();
    out.grad[i].assign(T * V, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double g = r.grad[i][t];
      if (g == 0.0) continue;
      for (std::size_t v = 0; v < V; ++v) out.grad[i][t * V + v] = -g * probs[i][t * V + v];
      out.grad[i][t * V + static_cast<std::size_t>(tokens[i][t])] += g;
    }
  }
  return out;
}

}  // namespace rosd
