#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rosd {

enum class AdvantageMode { StdNorm, Unbiased };

std::string to_string(AdvantageMode m);
AdvantageMode parse_advantage_mode(std::string_view name);

inline constexpr double kDefaultSigmaEps = 1e-6;
inline constexpr double kDefaultEpsLow = 0.2;
inline constexpr double kDefaultEpsHigh = 0.28;

struct AdvantageResult {
  std::vector<double> advantages;
  double group_mean = 0.0;
  double group_std = 0.0;  // population standard deviation
  AdvantageMode mode = AdvantageMode::StdNorm;
};

/// Group-relative advantages. Zero-variance groups give all-zero advantages in both modes.
AdvantageResult group_advantage(std::span<const double> rewards, AdvantageMode mode,
                                double sigma_eps = kDefaultSigmaEps);

struct GrpoResult {
  double loss = 0.0;
  /// d loss / d new_logprobs, same ragged shape as the inputs.
  std::vector<std::vector<double>> grad;
};

/// Clipped group policy-gradient loss: token mean within each rollout, then mean over the group.
GrpoResult grpo_loss(const std::vector<std::vector<double>>& new_logprobs,
                     const std::vector<std::vector<double>>& old_logprobs, std::span<const double> advantages,
                     double eps_low = kDefaultEpsLow, double eps_high = kDefaultEpsHigh);

/// Same objective with the unclipped surrogate, used to check clip inactivity.
double unclipped_objective_loss(const std::vector<std::vector<double>>& new_logprobs,
                                const std::vector<std::vector<double>>& old_logprobs,
                                std::span<const double> advantages);

struct GrpoLogitsResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // per rollout, T_i x V row-major
};

/// grpo_loss with new log-probabilities computed as log-softmax(logits)[token]; gradient is
/// taken with respect to the logits.
GrpoLogitsResult grpo_loss_from_logits(const std::vector<std::vector<double>>& logits, int vocab,
                                       const std::vector<std::vector<int>>& tokens,
                                       const std::vector<std::vector<double>>& old_logprobs,
                                       std::span<const double> advantages, double eps_low = kDefaultEpsLow,
                                       double eps_high = kDefaultEpsHigh);

}  // namespace rosd
