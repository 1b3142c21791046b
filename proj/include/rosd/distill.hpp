#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rosd {

/// A next-token distribution over an explicit support of token indices.
struct TokenDistribution {
  std::vector<int> support;
  std::vector<double> probs;
  bool truncated = false;
  std::optional<int> k;

  /// Full-vocabulary distribution (support 0..n-1).
  static TokenDistribution dense(std::vector<double> probs);
  /// Softmax of logits over the full vocabulary.
  static TokenDistribution from_logits(std::span<const double> logits);

  double prob_of(int token) const;
  /// Non-negative, unique support, sums to 1 within tol.
  bool valid(double tol = 1e-6) const;
};

enum class Divergence { FKL, RKL, JSD };
enum class Aggregation { Sum, MeanUnmasked };

std::string to_string(Divergence d);
Divergence parse_divergence(std::string_view name);
std::string to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

/// Probabilities are floored at this value inside logarithms.
inline constexpr double kLogFloor = 1e-12;

/// KL(p || q) over the union of supports. Returns +infinity when p puts mass where q has none.
double forward_kl(const TokenDistribution& p, const TokenDistribution& q);

/// alpha * KL(p || m) + (1 - alpha) * KL(q || m) with m = alpha * p + (1 - alpha) * q.
double jsd(const TokenDistribution& p, const TokenDistribution& q, double alpha);

/// Keeps the k most probable teacher tokens (ties: lower token index first) and renormalizes
/// both distributions over that support. k >= support size leaves both unchanged.
std::pair<TokenDistribution, TokenDistribution> truncate_topk(const TokenDistribution& teacher,
                                                              const TokenDistribution& student, int k);

/// D(student || teacher) in the orientation selected by `divergence`:
/// FKL = KL(student || teacher), RKL = KL(teacher || student), JSD mixes with weight alpha on the student.
double divergence(const TokenDistribution& student, const TokenDistribution& teacher, Divergence divergence,
                  double alpha);

struct DistillationMask {
  std::vector<double> weights;
  int k = 0;
  int length = 0;
};

DistillationMask all_ones_mask(int length);

double sdpo_loss(std::span<const TokenDistribution> student, std::span<const TokenDistribution> teacher,
                 Divergence div, double alpha, Aggregation agg = Aggregation::Sum);

double rosd_loss(std::span<const TokenDistribution> student, std::span<const TokenDistribution> teacher,
                 const DistillationMask& mask, Divergence div, double alpha, Aggregation agg = Aggregation::Sum);

struct DistillSettings {
  Divergence divergence = Divergence::JSD;
  double alpha = 0.5;
  int top_k = 100;
  Aggregation aggregation = Aggregation::Sum;
};

struct DistillGrad {
  double loss = 0.0;
  std::vector<double> student;  // d loss / d student logits, T x V row-major
  std::vector<double> teacher;  // always zero: the teacher side is a stop-gradient target
  int active_positions = 0;     // positions with non-zero mask weight
};

/// Masked distillation loss on raw logits (T x V row-major) with its gradient. Teacher logits are
/// converted to a top-k truncated target; the student is renormalized over the same support.
DistillGrad distill_from_logits(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                int length, int vocab, std::span<const double> mask, const DistillSettings& settings);

}  // namespace rosd
