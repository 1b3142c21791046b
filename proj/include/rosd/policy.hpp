#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/distill.hpp"
#include "rosd/tasks.hpp"
#include "rosd/tokenizer.hpp"
#include "rosd/transformer.hpp"

namespace rosd {

enum class Role { Student, Teacher, Reflector };
std::string to_string(Role r);
Role parse_role(std::string_view name);

/// The shared project tokenizer.
const Tokenizer& grammar_tokenizer();

/// Architecture used unless a config overrides it.
ModelConfig default_model_config();

class PolicyModel {
 public:
  using Net = Transformer<float>;

  explicit PolicyModel(const ModelConfig& config, Role role = Role::Student);
  static PolicyModel random(const ModelConfig& config, std::uint64_t seed, Role role = Role::Student);

  const ModelConfig& config() const { return net_.config(); }
  Role role() const { return role_; }
  void set_role(Role r) { role_ = r; }
  Net& net() { return net_; }
  const Net& net() const { return net_; }

  /// Copy of the weights under another role (teacher and reflector snapshots).
  PolicyModel snapshot(Role role) const;

  /// FNV-1a over the raw parameter bytes.
  std::uint64_t parameter_hash() const;

 private:
  Net net_;
  Role role_;
};

struct Rollout {
  std::string problem_id;
  int index = 0;  // position within its group
  std::vector<TokenId> token_ids;
  std::string text;
  std::vector<CharSpan> offsets;
  std::vector<double> sample_logprobs;
  int reward = 0;

  int length() const { return static_cast<int>(token_ids.size()); }
};

struct RolloutGroup {
  std::string problem_id;
  std::vector<Rollout> rollouts;
  std::vector<int> correct;  // indices into rollouts
  std::vector<int> wrong;
};

/// Builds a group and its correct/wrong partition from finished rollouts.
RolloutGroup make_group(const Problem& problem, std::vector<Rollout> rollouts);

/// BOS + context + SEP + response. The distribution for response token t sits at row
/// prefix_length(context) - 1 + t of the model output.
std::vector<TokenId> model_input(std::string_view context, std::span<const TokenId> response);
int prefix_length(std::string_view context);

struct SamplingSpec {
  int group_size = 8;
  double temperature = 1.0;
  int max_len = 128;
};

/// G samples per problem, decoded in lockstep across the whole batch. Each rollout draws from its
/// own stream derive_seed(seed, problem index, rollout index), so results do not depend on batching.
std::vector<RolloutGroup> sample_groups(const PolicyModel& model, std::span<const Problem> problems,
                                        const SamplingSpec& spec, std::uint64_t seed);

/// sample_groups without the G >= 2 requirement (evaluation may draw a single sample).
std::vector<RolloutGroup> sample_responses(const PolicyModel& model, std::span<const Problem> problems,
                                           const SamplingSpec& spec, std::uint64_t seed);

RolloutGroup sample_rollouts(const PolicyModel& model, const Problem& problem, int G, double temperature,
                             int max_len, std::uint64_t seed);

/// Greedy (temperature 0) continuation of an arbitrary context; returns the decoded text.
std::string generate_greedy(const PolicyModel& model, std::string_view context, int max_new_tokens);
/// Greedy continuations of several contexts decoded in lockstep.
std::vector<std::string> generate_greedy_batch(const PolicyModel& model, std::span<const std::string> contexts,
                                               int max_new_tokens);

/// One distribution per rollout position, conditioned on context followed by y_<t.
std::vector<TokenDistribution> next_token_distributions(const PolicyModel& model, std::string_view context,
                                                        const Rollout& rollout, double temperature = 1.0);

/// Log-probabilities of the rollout tokens under `model` (double precision readout).
std::vector<double> rollout_logprobs(const PolicyModel& model, std::string_view context, const Rollout& rollout,
                                     double temperature = 1.0);

/// teacher <- tau * teacher + (1 - tau) * student.
void ema_update(PolicyModel& teacher, const PolicyModel& student, double tau);

/// oracle_first_error on a sampled rollout.
std::optional<OracleFinding> oracle_first_error(const Problem& problem, const Rollout& rollout);

// Versioned checkpoint file: magic, format version, JSON header (architecture, role, vocab), float32 blob.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model);
PolicyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rosd
