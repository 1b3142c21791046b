#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rosd {

enum class OptimizerKind { SGD, Adam };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::size_t num_params);

  /// params -= update(grad). `lr_scale` multiplies the configured rate (schedules).
  /// Returns the gradient norm before clipping.
  double step(std::span<float> params, std::span<const float> grad, double lr_scale = 1.0);

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  OptimizerConfig config_;
  std::vector<float> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace rosd
