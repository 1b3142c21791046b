#include "rosd/transformer.hpp"

#include <cmath>
#include <string>

#include "rosd/errors.hpp"
#include "rosd/rng.hpp"

namespace rosd {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kRopeBase = 10000.0;

template <typename S>
S gelu(S x) {
  const S c = static_cast<S>(0.7978845608028654);
  return static_cast<S>(0.5) * x * (S(1) + std::tanh(c * (x + static_cast<S>(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  const S c = static_cast<S>(0.7978845608028654);
  const S k = static_cast<S>(0.044715);
  const S t = std::tanh(c * (x + k * x * x * x));
  return static_cast<S>(0.5) * (S(1) + t) + static_cast<S>(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3) * k * x * x);
}

template <typename Mat, typename Vec, typename S>
void rms_forward(const Mat& x, const S* gain, Mat& out, Vec& inv) {
  const auto n = x.rows();
  const auto d = x.cols();
  out.resize(n, d);
  inv.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const S ms = x.row(r).squaredNorm() / static_cast<S>(d);
    const S iv = S(1) / std::sqrt(ms + static_cast<S>(kNormEps));
    inv(r) = iv;
    for (Eigen::Index c = 0; c < d; ++c) out(r, c) = x(r, c) * iv * gain[c];
  }
}

// dx += d(rmsnorm)/dx * dh ; dgain += ...
template <typename Mat, typename Vec, typename S>
void rms_backward(const Mat& x, const Vec& inv, const S* gain, const Mat& dh, Mat& dx, S* dgain) {
  const auto n = x.rows();
  const auto d = x.cols();
  for (Eigen::Index r = 0; r < n; ++r) {
    const S iv = inv(r);
    S dot = 0;
    for (Eigen::Index c = 0; c < d; ++c) {
      dot += gain[c] * dh(r, c) * x(r, c);
      dgain[c] += x(r, c) * iv * dh(r, c);
    }
    const S coef = iv * iv * iv * dot / static_cast<S>(d);
    for (Eigen::Index c = 0; c < d; ++c) dx(r, c) += iv * gain[c] * dh(r, c) - x(r, c) * coef;
  }
}

}  // namespace

template <typename Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& config) : config_(config) {
  const int d = config.width;
  if (config.vocab < 5 || config.layers < 1 || d < 2 || config.heads < 1 || d % config.heads != 0 ||
      (d / config.heads) % 2 != 0 || config.mlp < 1 || config.context < 2) {
    throw ConfigError("invalid transformer architecture");
  }
  const auto D = static_cast<std::size_t>(d);
  const auto V = static_cast<std::size_t>(config.vocab);
  const auto M = static_cast<std::size_t>(config.mlp);
  std::size_t off = 0;
  emb_ = off;
  off += V * D;
  for (int l = 0; l < config.layers; ++l) {
    Offsets o{};
    o.norm1 = off; off += D;
    o.wqkv = off; off += D * 3 * D;
    o.wo = off; off += D * D;
    o.norm2 = off; off += D;
    o.w1 = off; off += D * M;
    o.b1 = off; off += M;
    o.w2 = off; off += M * D;
    o.b2 = off; off += D;
    layer_offsets_.push_back(o);
  }
  normf_ = off; off += D;
  wout_ = off; off += D * V;
  bout_ = off; off += V;
  params_.assign(off, Scalar(0));

  const int half = d / config.heads / 2;
  cos_.resize(static_cast<std::size_t>(config.context * half));
  sin_.resize(cos_.size());
  for (int pos = 0; pos < config.context; ++pos) {
    for (int i = 0; i < half; ++i) {
      const double theta = pos * std::pow(kRopeBase, -2.0 * i / (2.0 * half));
      cos_[static_cast<std::size_t>(pos * half + i)] = static_cast<Scalar>(std::cos(theta));
      sin_[static_cast<std::size_t>(pos * half + i)] = static_cast<Scalar>(std::sin(theta));
    }
  }
}

template <typename Scalar>
void Transformer<Scalar>::init(std::uint64_t seed) {
  Rng rng(seed);
  const int d = config_.width;
  const auto fill = [&](std::size_t off, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) params_[off + i] = static_cast<Scalar>(rng.normal() * stddev);
  };
  const auto ones = [&](std::size_t off) {
    for (int i = 0; i < d; ++i) params_[off + static_cast<std::size_t>(i)] = Scalar(1);
  };
  const auto D = static_cast<std::size_t>(d);
  const auto M = static_cast<std::size_t>(config_.mlp);
  const double residual_scale = 1.0 / std::sqrt(2.0 * config_.layers);
  std::fill(params_.begin(), params_.end(), Scalar(0));
  fill(emb_, static_cast<std::size_t>(config_.vocab) * D, 1.0);
  for (const auto& o : layer_offsets_) {
    ones(o.norm1);
    ones(o.norm2);
    fill(o.wqkv, D * 3 * D, 1.0 / std::sqrt(d));
    fill(o.wo, D * D, residual_scale / std::sqrt(d));
    fill(o.w1, D * M, 1.0 / std::sqrt(d));
    fill(o.w2, M * D, residual_scale / std::sqrt(static_cast<double>(M)));
  }
  ones(normf_);
  fill(wout_, D * static_cast<std::size_t>(config_.vocab), 0.5 / std::sqrt(d));
}

template <typename Scalar>
void Transformer<Scalar>::rope(Scalar* row, int pos, bool inverse) const {
  const int dh = config_.width / config_.heads;
  const int half = dh / 2;
  const Scalar* c = cos_.data() + static_cast<std::size_t>(pos * half);
  const Scalar* s = sin_.data() + static_cast<std::size_t>(pos * half);
  for (int h = 0; h < config_.heads; ++h) {
    Scalar* v = row + h * dh;
    for (int i = 0; i < half; ++i) {
      const Scalar x0 = v[2 * i];
      const Scalar x1 = v[2 * i + 1];
      const Scalar sn = inverse ? -s[i] : s[i];
      v[2 * i] = x0 * c[i] - x1 * sn;
      v[2 * i + 1] = x0 * sn + x1 * c[i];
    }
  }
}

template <typename Scalar>
typename Transformer<Scalar>::Mat Transformer<Scalar>::forward(std::span<const std::vector<TokenId>> seqs,
                                                               Cache* cache) const {
  using CMap = Eigen::Map<const Mat>;
  using CVec = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>;
  const int d = config_.width;
  const int dh = d / config_.heads;
  const int V = config_.vocab;
  const int M = config_.mlp;
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Cache local;
  Cache& c = cache ? *cache : local;
  c.starts.clear();
  c.lengths.clear();
  c.tokens.clear();
  int n = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw InputError("forward: empty sequence");
    if (static_cast<int>(s.size()) > config_.context) {
      throw InputError("sequence of " + std::to_string(s.size()) + " tokens exceeds model context " +
                       std::to_string(config_.context));
    }
    c.starts.push_back(n);
    c.lengths.push_back(static_cast<int>(s.size()));
    for (TokenId t : s) {
      if (t < 0 || t >= V) throw InputError("token id out of range");
      c.tokens.push_back(t);
    }
    n += static_cast<int>(s.size());
  }

  Mat x(n, d);
  const CMap emb(p(emb_), V, d);
  for (int r = 0; r < n; ++r) x.row(r) = emb.row(c.tokens[static_cast<std::size_t>(r)]);

  c.layers.resize(static_cast<std::size_t>(config_.layers));
  for (int l = 0; l < config_.layers; ++l) {
    const Offsets& o = layer_offsets_[static_cast<std::size_t>(l)];
    auto& L = c.layers[static_cast<std::size_t>(l)];
    L.x_in = x;
    rms_forward(x, p(o.norm1), L.h1, L.inv1);
    L.qkv.noalias() = L.h1 * CMap(p(o.wqkv), d, 3 * d);
    for (std::size_t s = 0; s < c.starts.size(); ++s) {
      for (int t = 0; t < c.lengths[s]; ++t) {
        Scalar* row = L.qkv.row(c.starts[s] + t).data();
        rope(row, t, false);
        rope(row + d, t, false);
      }
    }
    L.o.setZero(n, d);
    if (cache) L.probs.assign(c.starts.size() * static_cast<std::size_t>(config_.heads), Mat());
    for (std::size_t s = 0; s < c.starts.size(); ++s) {
      const int st = c.starts[s];
      const int len = c.lengths[s];
      for (int h = 0; h < config_.heads; ++h) {
        const auto q = L.qkv.block(st, h * dh, len, dh);
        const auto k = L.qkv.block(st, d + h * dh, len, dh);
        const auto v = L.qkv.block(st, 2 * d + h * dh, len, dh);
        Mat scores = (q * k.transpose()) * scale;
        for (int i = 0; i < len; ++i) {
          Scalar mx = scores(i, 0);
          for (int j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
          Scalar sum = 0;
          for (int j = 0; j <= i; ++j) {
            scores(i, j) = std::exp(scores(i, j) - mx);
            sum += scores(i, j);
          }
          for (int j = 0; j <= i; ++j) scores(i, j) /= sum;
          for (int j = i + 1; j < len; ++j) scores(i, j) = 0;
        }
        L.o.block(st, h * dh, len, dh).noalias() = scores * v;
        if (cache) L.probs[s * static_cast<std::size_t>(config_.heads) + static_cast<std::size_t>(h)] = std::move(scores);
      }
    }
    x.noalias() += L.o * CMap(p(o.wo), d, d);
    L.x_mid = x;
    rms_forward(x, p(o.norm2), L.h2, L.inv2);
    L.u.noalias() = L.h2 * CMap(p(o.w1), d, M);
    L.u.rowwise() += CVec(p(o.b1), M);
    L.a = L.u.unaryExpr([](Scalar z) { return gelu(z); });
    x.noalias() += L.a * CMap(p(o.w2), M, d);
    x.rowwise() += CVec(p(o.b2), d);
  }
  c.x_last = x;
  rms_forward(x, p(normf_), c.hf, c.invf);
  Mat logits = c.hf * CMap(p(wout_), d, V);
  logits.rowwise() += CVec(p(bout_), V);
  return logits;
}

template <typename Scalar>
void Transformer<Scalar>::backward(const Cache& c, const Mat& dlogits, std::span<Scalar> grad) const {
  using CMap = Eigen::Map<const Mat>;
  using GMap = Eigen::Map<Mat>;
  using GVec = Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>;
  if (grad.size() != params_.size()) throw InputError("backward: gradient buffer has wrong size");
  const int d = config_.width;
  const int dh = d / config_.heads;
  const int V = config_.vocab;
  const int M = config_.mlp;
  const auto n = static_cast<int>(c.tokens.size());
  if (dlogits.rows() != n || dlogits.cols() != V) throw InputError("backward: dlogits shape mismatch");
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  ParamVector acc(grad.size(), Scalar(0));
  Scalar* g = acc.data();

  GMap(g + wout_, d, V).noalias() += c.hf.transpose() * dlogits;
  GVec(g + bout_, V) += dlogits.colwise().sum();
  Mat dhf = dlogits * CMap(p(wout_), d, V).transpose();
  Mat dx = Mat::Zero(n, d);
  rms_backward(c.x_last, c.invf, p(normf_), dhf, dx, g + normf_);

  for (int l = config_.layers - 1; l >= 0; --l) {
    const Offsets& o = layer_offsets_[static_cast<std::size_t>(l)];
    const auto& L = c.layers[static_cast<std::size_t>(l)];
    // MLP block
    GVec(g + o.b2, d) += dx.colwise().sum();
    GMap(g + o.w2, M, d).noalias() += L.a.transpose() * dx;
    Mat du = dx * CMap(p(o.w2), M, d).transpose();
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < M; ++j) du(r, j) *= gelu_grad(L.u(r, j));
    }
    GMap(g + o.w1, d, M).noalias() += L.h2.transpose() * du;
    GVec(g + o.b1, M) += du.colwise().sum();
    Mat dh2 = du * CMap(p(o.w1), d, M).transpose();
    rms_backward(L.x_mid, L.inv2, p(o.norm2), dh2, dx, g + o.norm2);

    // attention block
    GMap(g + o.wo, d, d).noalias() += L.o.transpose() * dx;
    Mat d_o = dx * CMap(p(o.wo), d, d).transpose();
    Mat dqkv = Mat::Zero(n, 3 * d);
    for (std::size_t s = 0; s < c.starts.size(); ++s) {
      const int st = c.starts[s];
      const int len = c.lengths[s];
      for (int h = 0; h < config_.heads; ++h) {
        const Mat& P = L.probs[s * static_cast<std::size_t>(config_.heads) + static_cast<std::size_t>(h)];
        const auto q = L.qkv.block(st, h * dh, len, dh);
        const auto k = L.qkv.block(st, d + h * dh, len, dh);
        const auto v = L.qkv.block(st, 2 * d + h * dh, len, dh);
        const auto dO = d_o.block(st, h * dh, len, dh);
        Mat dP = dO * v.transpose();
        dqkv.block(st, 2 * d + h * dh, len, dh).noalias() += P.transpose() * dO;
        for (int i = 0; i < len; ++i) {
          Scalar dot = 0;
          for (int j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
          for (int j = 0; j <= i; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * scale;
          for (int j = i + 1; j < len; ++j) dP(i, j) = 0;
        }
        dqkv.block(st, h * dh, len, dh).noalias() += dP * k;
        dqkv.block(st, d + h * dh, len, dh).noalias() += dP.transpose() * q;
      }
      for (int t = 0; t < len; ++t) {
        Scalar* row = dqkv.row(st + t).data();
        rope(row, t, true);
        rope(row + d, t, true);
      }
    }
    GMap(g + o.wqkv, d, 3 * d).noalias() += L.h1.transpose() * dqkv;
    Mat dh1 = dqkv * CMap(p(o.wqkv), d, 3 * d).transpose();
    rms_backward(L.x_in, L.inv1, p(o.norm1), dh1, dx, g + o.norm1);
  }
  GMap demb(g + emb_, V, d);
  for (int r = 0; r < n; ++r) demb.row(c.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += acc[i];
}

template <typename Scalar>
typename Transformer<Scalar>::DecodeState Transformer<Scalar>::new_state() const {
  DecodeState s;
  s.keys.assign(static_cast<std::size_t>(config_.layers), Mat::Zero(config_.context, config_.width));
  s.values.assign(static_cast<std::size_t>(config_.layers), Mat::Zero(config_.context, config_.width));
  return s;
}

template <typename Scalar>
typename Transformer<Scalar>::Mat Transformer<Scalar>::step(std::span<DecodeState* const> states,
                                                            std::span<const TokenId> tokens) const {
  using CMap = Eigen::Map<const Mat>;
  using CVec = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>;
  if (states.size() != tokens.size()) throw InputError("step: states/tokens size mismatch");
  const int d = config_.width;
  const int dh = d / config_.heads;
  const int V = config_.vocab;
  const int M = config_.mlp;
  const auto b = static_cast<int>(states.size());
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (auto* s : states) {
    if (s->length >= config_.context) throw InputError("decode: model context exhausted");
  }

  Mat x(b, d);
  const CMap emb(p(emb_), V, d);
  for (int r = 0; r < b; ++r) {
    const TokenId t = tokens[static_cast<std::size_t>(r)];
    if (t < 0 || t >= V) throw InputError("token id out of range");
    x.row(r) = emb.row(t);
  }
  Mat h, qkv, o, u;
  Vec inv;
  for (int l = 0; l < config_.layers; ++l) {
    const Offsets& off = layer_offsets_[static_cast<std::size_t>(l)];
    rms_forward(x, p(off.norm1), h, inv);
    qkv.noalias() = h * CMap(p(off.wqkv), d, 3 * d);
    o.setZero(b, d);
    for (int r = 0; r < b; ++r) {
      DecodeState& st = *states[static_cast<std::size_t>(r)];
      const int pos = st.length;
      Scalar* row = qkv.row(r).data();
      rope(row, pos, false);
      rope(row + d, pos, false);
      auto& keys = st.keys[static_cast<std::size_t>(l)];
      auto& values = st.values[static_cast<std::size_t>(l)];
      keys.row(pos) = qkv.row(r).segment(d, d);
      values.row(pos) = qkv.row(r).segment(2 * d, d);
      for (int hd = 0; hd < config_.heads; ++hd) {
        const auto k = keys.block(0, hd * dh, pos + 1, dh);
        const auto v = values.block(0, hd * dh, pos + 1, dh);
        Vec scores = (k * qkv.row(r).segment(hd * dh, dh).transpose()) * scale;
        const Scalar mx = scores.maxCoeff();
        scores = (scores.array() - mx).exp();
        scores /= scores.sum();
        o.row(r).segment(hd * dh, dh).noalias() = scores.transpose() * v;
      }
    }
    x.noalias() += o * CMap(p(off.wo), d, d);
    rms_forward(x, p(off.norm2), h, inv);
    u.noalias() = h * CMap(p(off.w1), d, M);
    u.rowwise() += CVec(p(off.b1), M);
    u = u.unaryExpr([](Scalar z) { return gelu(z); });
    x.noalias() += u * CMap(p(off.w2), M, d);
    x.rowwise() += CVec(p(off.b2), d);
  }
  rms_forward(x, p(normf_), h, inv);
  Mat logits = h * CMap(p(wout_), d, V);
  logits.rowwise() += CVec(p(bout_), V);
  for (auto* s : states) ++s->length;
  return logits;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace rosd
