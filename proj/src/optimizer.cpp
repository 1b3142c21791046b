#include "rosd/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "rosd/errors.hpp"

namespace rosd {

namespace {
constexpr char kMagic[8] = {'R', 'O', 'S', 'D', 'O', 'P', 'T', '1'};
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "SGD" : "ADAM"; }

OptimizerKind parse_optimizer(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "SGD") return OptimizerKind::SGD;
  if (n == "ADAM") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + std::string(name));
}

Optimizer::Optimizer(const OptimizerConfig& config, std::size_t num_params) : config_(config) {
  if (!(config.lr > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
  if (config.clip_norm < 0.0) throw ConfigError("optimizer: clip_norm must be >= 0");
  if (config.kind == OptimizerKind::Adam) {
    m_.assign(num_params, 0.0f);
    v_.assign(num_params, 0.0f);
  }
}

double Optimizer::step(std::span<float> params, std::span<const float> grad, double lr_scale) {
  if (params.size() != grad.size()) throw InputError("optimizer: gradient size mismatch");
  double sq = 0.0;
  for (float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (config_.clip_norm > 0.0 && norm > config_.clip_norm) scale = config_.clip_norm / norm;
  const double lr = config_.lr * lr_scale;
  ++t_;
  if (config_.kind == OptimizerKind::SGD) {
    const auto a = static_cast<float>(lr * scale);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= a * grad[i];
    return norm;
  }
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto step_size = static_cast<float>(lr * std::sqrt(c2) / c1);
  const auto eps = static_cast<float>(config_.eps * std::sqrt(c2));
  const auto s = static_cast<float>(scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i] * s;
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) + eps);
  }
  return norm;
}

void Optimizer::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write optimizer state " + path.string());
    const auto n = static_cast<std::uint64_t>(m_.size());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&t_), sizeof t_);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    out.write(reinterpret_cast<const char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw InputError("failed writing optimizer state " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void Optimizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read optimizer state " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw InputError("not an optimizer state file: " + path.string());
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&t_), sizeof t_);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (n != m_.size()) throw InputError("optimizer state size mismatch in " + path.string());
  in.read(reinterpret_cast<char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(float)));
  in.read(reinterpret_cast<char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw InputError("truncated optimizer state " + path.string());
}

}  // namespace rosd
