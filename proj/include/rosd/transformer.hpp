#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rosd/tokenizer.hpp"

namespace rosd {

struct ModelConfig {
  int vocab = 0;
  int layers = 2;
  int width = 64;
  int heads = 4;
  int mlp = 256;
  int context = 512;
  bool operator==(const ModelConfig&) const = default;
};

/// Pre-norm decoder-only transformer (RMSNorm, rotary attention, GELU MLP) over a flat
/// parameter vector. Scalar is float for training and double for gradient checks.
template <typename Scalar>
class Transformer {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  // Aligned so vectorized reductions peel identically on every copy of the weights.
  using ParamVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  explicit Transformer(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t num_params() const { return params_.size(); }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  void init(std::uint64_t seed);

  /// Activations kept by forward() for backward().
  struct Cache {
    struct Layer {
      Mat x_in, h1, qkv, o, x_mid, h2, u, a;
      Vec inv1, inv2;
      std::vector<Mat> probs;  // per (sequence, head), row-major causal softmax
    };
    std::vector<int> starts, lengths;
    std::vector<int> tokens;
    std::vector<Layer> layers;
    Mat x_last, hf;
    Vec invf;
  };

  /// Logits for every position of every sequence, rows concatenated in order.
  Mat forward(std::span<const std::vector<TokenId>> seqs, Cache* cache) const;

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits).
  void backward(const Cache& cache, const Mat& dlogits, std::span<Scalar> grad) const;

  struct DecodeState {
    std::vector<Mat> keys, values;  // per layer, context x width
    int length = 0;
  };
  DecodeState new_state() const;

  /// Appends one token to each state and returns the next-token logits (one row per state).
  Mat step(std::span<DecodeState* const> states, std::span<const TokenId> tokens) const;

 private:
  struct Offsets {
    std::size_t norm1, wqkv, wo, norm2, w1, b1, w2, b2;
  };

  const Scalar* p(std::size_t off) const { return params_.data() + off; }
  void rope(Scalar* row, int pos, bool inverse) const;

  ModelConfig config_;
  ParamVector params_;
  std::size_t emb_ = 0, normf_ = 0, wout_ = 0, bout_ = 0;
  std::vector<Offsets> layer_offsets_;
  std::vector<Scalar> cos_, sin_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace rosd
