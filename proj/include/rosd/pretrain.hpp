#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rosd/optimizer.hpp"
#include "rosd/policy.hpp"
#include "rosd/rng.hpp"
#include "rosd/tasks.hpp"

namespace rosd {

/// Supervised warm start that gives the RL stage a weak but non-trivial base model.
/// Student-format targets are noisy solutions; hint- and reference-conditioned targets teach
/// the same model to act as a conditioned self-teacher.
struct PretrainConfig {
  std::uint64_t seed = 1;
  int steps = 4500;
  int clean_steps = 2500;  // leading steps trained on noise-free targets
  int batch = 32;
  double lr = 3e-3;
  int warmup = 200;
  double clip_norm = 1.0;
  double arith_fraction = 0.7;
  double student_noise = 0.6;  // per-step chance of a wrong value in student-format targets
  double hint_noise = 0.0;     // same, for steps a hint does not pin down
  double w_student = 0.5;
  double w_hint = 0.25;
  double w_valid = 0.1;
  double w_reference = 0.15;
  double w_reflect = 0.0;
  int pool_size = 20000;  // problems per family
  int log_every = 100;
};

struct Example {
  std::string context;
  std::string response;
};

/// A response to `problem` in the solver format where each step's value is wrong with
/// probability `noise`. Later steps consume the possibly wrong earlier values. Steps with index
/// at most `clean_through` (1-based) are always correct.
std::string noisy_solution(const Problem& problem, double noise, Rng& rng, int clean_through = 0);

/// One random training pair drawn from the corpus mixture.
Example sample_example(const PretrainConfig& config, const std::vector<Problem>& arith,
                       const std::vector<Problem>& strings, Rng& rng);

/// Mean cross-entropy over response tokens (EOS included); accumulates its gradient into grad.
double supervised_loss(const PolicyModel& model, const std::vector<Example>& batch, std::vector<float>& grad);

using PretrainLogger = std::function<void(int step, double loss)>;

PolicyModel pretrain(const ModelConfig& model_config, const PretrainConfig& config,
                     const PretrainLogger& log = nullptr);

}  // namespace rosd
