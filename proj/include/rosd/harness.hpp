#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosd/advantage.hpp"
#include "rosd/distill.hpp"
#include "rosd/locate.hpp"
#include "rosd/optimizer.hpp"
#include "rosd/policy.hpp"
#include "rosd/reflect.hpp"
#include "rosd/tasks.hpp"

namespace rosd {

enum class Method { GRPO, SDPO, ROSD };
enum class TeacherMode { Frozen, Ema };
/// What the SDPO teacher sees: a successful rollout of the group, or the canonical solution.
enum class SdpoContext { Rollout, Oracle };

std::string to_string(Method m);
Method parse_method(std::string_view name);
std::string to_string(TeacherMode m);
TeacherMode parse_teacher_mode(std::string_view name);
std::string to_string(SdpoContext c);
SdpoContext parse_sdpo_context(std::string_view name);

struct TrainConfig {
  Method method = Method::ROSD;
  Family train_family = Family::ArithChain;
  std::vector<Family> eval_families = all_families();
  int group_size = 8;
  int batch_size = 32;
  int steps = 500;
  int eval_every = 10;
  int eval_samples = 8;
  int eval_problems = 32;
  int train_pool = 2000;
  std::uint64_t eval_seed = 9001;
  double temperature = 1.0;
  int max_len = 128;

  Divergence divergence = Divergence::JSD;
  double alpha = 0.5;
  int top_k = 100;
  Aggregation aggregation = Aggregation::Sum;

  double eps_low = kDefaultEpsLow;
  double eps_high = kDefaultEpsHigh;
  AdvantageMode advantage_mode = AdvantageMode::Unbiased;

  TeacherMode teacher_mode = TeacherMode::Frozen;
  double ema_tau = 0.99;
  ReflectorMode reflector_mode = ReflectorMode::Oracle;
  SdpoContext sdpo_context = SdpoContext::Rollout;
  bool normalized_matching = true;
  double lambda = 0.0;

  std::vector<std::uint64_t> seeds = {1};
  OptimizerKind optimizer = OptimizerKind::SGD;
  double lr = 0.05;
  double clip_norm = 1.0;

  int layers = 2;
  int width = 64;
  int heads = 4;
  int mlp = 256;
  int context = 512;
  std::string base_checkpoint;  // empty: random initialization from the run seed
  std::string out_dir = "runs";
  int checkpoint_every = 100;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  ModelConfig model_config() const;
};

/// Flat key/value rendering, one field per key; the inverse of config_from_map.
std::map<std::string, std::string> config_to_map(const TrainConfig& c);
/// Unknown keys and malformed values throw ConfigError. Missing keys keep their defaults.
TrainConfig config_from_map(const std::map<std::string, std::string>& values, TrainConfig base = {});
/// "key = value" lines in a stable order.
std::string config_to_text(const TrainConfig& c);
std::map<std::string, std::string> parse_config_text(std::string_view text);

struct LocalizationRecord {
  std::string rollout_id;
  int k = 0;
  int length = 0;
  MatchKind match_kind = MatchKind::None;
};

struct StepMetrics {
  int step = 0;
  double rollout_accuracy = 0.0;
  double loss = 0.0;
  std::optional<double> match_rate;
  std::optional<double> mean_normalized_error_position;
  double mean_response_length = 0.0;
  double wall_time = 0.0;  // seconds; kept out of metrics.jsonl so reruns compare byte for byte
  bool updated = false;
  int distill_rollouts = 0;
  int grpo_groups = 0;
  double grad_norm = 0.0;
  std::vector<LocalizationRecord> localization;
};

/// The metrics.jsonl record for a step (wall time excluded).
nlohmann::json to_json(const StepMetrics& m);

struct Models {
  PolicyModel student;
  PolicyModel teacher;
  PolicyModel reflector;
};

/// Loss value and student-parameter gradient of one step's objective on sampled groups,
/// without touching the models. Exposed for equivalence and gradient tests.
struct ObjectiveResult {
  double loss = 0.0;
  std::vector<float> grad;
  bool usable = false;
  int distill_rollouts = 0;
  int grpo_groups = 0;
  std::vector<LocalizationRecord> localization;
  std::optional<double> match_rate;
  std::optional<double> mean_normalized_error_position;
};

/// Teacher conditioning and mask for one rollout in a distillation method.
struct DistillTarget {
  std::size_t group = 0;
  std::size_t rollout = 0;
  std::string teacher_context;
  DistillationMask mask;
};

/// Distillation targets for SDPO or ROSD on a set of sampled groups. Rollouts that get no
/// target (no reference in the group, or no reflection) are simply absent.
std::vector<DistillTarget> distill_targets(const TrainConfig& config, const Models& models,
                                           std::span<const Problem> problems, std::span<const RolloutGroup> groups,
                                           std::vector<LocalizationRecord>* localization = nullptr);

ObjectiveResult compute_objective(const TrainConfig& config, const Models& models, std::span<const Problem> problems,
                                  std::span<const RolloutGroup> groups);

/// compute_objective with the distillation targets supplied by the caller.
ObjectiveResult objective_from_targets(const TrainConfig& config, const Models& models,
                                       std::span<const Problem> problems, std::span<const RolloutGroup> groups,
                                       std::vector<DistillTarget> targets,
                                       std::vector<LocalizationRecord> localization = {});

/// One sampling + update step. The training problems for `step` are drawn from `pool`.
StepMetrics train_step(const TrainConfig& config, Models& models, Optimizer& optimizer,
                       std::span<const Problem> problems, int step);

/// Fraction of correct samples per group, averaged over groups.
double mean_at_k(std::span<const RolloutGroup> groups);

/// mean@k: per problem the fraction of k samples that verify, averaged over problems.
double evaluate(const PolicyModel& model, std::span<const Problem> problems, int k, double temperature,
                std::uint64_t seed, int max_len = 128);

/// Problems used for a given step of a run.
std::vector<Problem> step_problems(const TrainConfig& config, const std::vector<Problem>& pool, int step);

/// Runs config.method for every seed in config.seeds. Returns one run directory per seed.
/// A directory holding checkpoints of an identical config resumes from the latest one.
std::vector<std::filesystem::path> run_experiment(const TrainConfig& config);

/// Every method x seed combination.
std::vector<std::filesystem::path> run_grid(const TrainConfig& config, const std::vector<Method>& methods);

std::filesystem::path run_directory(const TrainConfig& config, std::uint64_t seed);

struct EvalRecord {
  int step = 0;
  Family family = Family::ArithChain;
  double mean_at_k = 0.0;
  int k = 0;
};

struct RunLog {
  std::vector<StepMetrics> steps;
  std::vector<EvalRecord> evals;
};

RunLog read_metrics(const std::filesystem::path& metrics_jsonl);

}  // namespace rosd
