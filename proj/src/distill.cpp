#include "rosd/distill.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "rosd/errors.hpp"

namespace rosd {

namespace {

double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

// (p_i, q_i) over the union of supports, ordered by token index.
std::vector<std::pair<double, double>> aligned(const TokenDistribution& p, const TokenDistribution& q) {
  std::map<int, std::pair<double, double>> merged;
  for (std::size_t i = 0; i < p.support.size(); ++i) merged[p.support[i]].first += p.probs[i];
  for (std::size_t i = 0; i < q.support.size(); ++i) merged[q.support[i]].second += q.probs[i];
  std::vector<std::pair<double, double>> out;
  out.reserve(merged.size());
  for (const auto& [idx, pq] : merged) out.push_back(pq);
  return out;
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("divergence alpha must lie in (0, 1)");
}

double position_divergence(const TokenDistribution& s, const TokenDistribution& t, Divergence div, double alpha) {
  switch (div) {
    case Divergence::FKL: return forward_kl(s, t);
    case Divergence::RKL: return forward_kl(t, s);
    case Divergence::JSD: return jsd(s, t, alpha);
  }
  return 0.0;
}

// Indices of the k largest teacher probabilities; ties resolved toward the lower index.
std::vector<int> topk_indices(std::span<const double> probs, std::span<const int> support, int k) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto kk = static_cast<std::size_t>(k);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return support[a] < support[b];
                    });
  std::vector<int> out;
  out.reserve(kk);
  for (std::size_t i = 0; i < kk; ++i) out.push_back(static_cast<int>(order[i]));
  return out;
}

}  // namespace

TokenDistribution TokenDistribution::dense(std::vector<double> probs) {
  TokenDistribution d;
  d.support.resize(probs.size());
  std::iota(d.support.begin(), d.support.end(), 0);
  d.probs = std::move(probs);
  return d;
}

TokenDistribution TokenDistribution::from_logits(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return dense(std::move(p));
}

double TokenDistribution::prob_of(int token) const {
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i] == token) return probs[i];
  }
  return 0.0;
}

bool TokenDistribution::valid(double tol) const {
  if (support.size() != probs.size() || support.empty()) return false;
  if (std::set<int>(support.begin(), support.end()).size() != support.size()) return false;
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

std::string to_string(Divergence d) {
  switch (d) {
    case Divergence::FKL: return "FKL";
    case Divergence::RKL: return "RKL";
    case Divergence::JSD: return "JSD";
  }
  return "JSD";
}

Divergence parse_divergence(std::string_view name) {
  const std::string n = upper(name);
  if (n == "FKL") return Divergence::FKL;
  if (n == "RKL") return Divergence::RKL;
  if (n == "JSD") return Divergence::JSD;
  throw ConfigError("unknown divergence: " + std::string(name));
}

std::string to_string(Aggregation a) { return a == Aggregation::Sum ? "SUM" : "MEAN_UNMASKED"; }

Aggregation parse_aggregation(std::string_view name) {
  const std::string n = upper(name);
  if (n == "SUM") return Aggregation::Sum;
  if (n == "MEAN_UNMASKED" || n == "MEAN") return Aggregation::MeanUnmasked;
  throw ConfigError("unknown aggregation: " + std::string(name));
}

double forward_kl(const TokenDistribution& p, const TokenDistribution& q) {
  double total = 0.0;
  for (const auto& [pi, qi] : aligned(p, q)) {
    if (pi <= 0.0) continue;
    if (qi <= 0.0) return std::numeric_limits<double>::infinity();
    total += pi * (safe_log(pi) - safe_log(qi));
  }
  return total;
}

double jsd(const TokenDistribution& p, const TokenDistribution& q, double alpha) {
  check_alpha(alpha);
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (const auto& [pi, qi] : aligned(p, q)) {
    const double mi = alpha * pi + (1.0 - alpha) * qi;
    if (pi > 0.0) kl_p += pi * (safe_log(pi) - safe_log(mi));
    if (qi > 0.0) kl_q += qi * (safe_log(qi) - safe_log(mi));
  }
  return alpha * kl_p + (1.0 - alpha) * kl_q;
}

std::pair<TokenDistribution, TokenDistribution> truncate_topk(const TokenDistribution& teacher,
                                                              const TokenDistribution& student, int k) {
  if (k < 1) throw ConfigError("top-k must be >= 1");
  if (static_cast<std::size_t>(k) >= teacher.support.size()) return {teacher, student};
  const auto picked = topk_indices(teacher.probs, teacher.support, k);
  TokenDistribution t;
  TokenDistribution s;
  t.truncated = s.truncated = true;
  t.k = s.k = k;
  double t_mass = 0.0;
  double s_mass = 0.0;
  for (int i : picked) {
    const int token = teacher.support[static_cast<std::size_t>(i)];
    const double tp = teacher.probs[static_cast<std::size_t>(i)];
    const double sp = student.prob_of(token);
    t.support.push_back(token);
    s.support.push_back(token);
    t.probs.push_back(tp);
    s.probs.push_back(sp);
    t_mass += tp;
    s_mass += sp;
  }
  if (t_mass <= 0.0 || s_mass <= 0.0) throw InputError("truncate_topk: no probability mass on the kept support");
  for (auto& v : t.probs) v /= t_mass;
  for (auto& v : s.probs) v /= s_mass;
  return {std::move(t), std::move(s)};
}

double divergence(const TokenDistribution& student, const TokenDistribution& teacher, Divergence div, double alpha) {
  return position_divergence(student, teacher, div, alpha);
}

DistillationMask all_ones_mask(int length) {
  DistillationMask m;
  m.weights.assign(static_cast<std::size_t>(length), 1.0);
  m.k = 0;
  m.length = length;
  return m;
}

double rosd_loss(std::span<const TokenDistribution> student, std::span<const TokenDistribution> teacher,
                 const DistillationMask& mask, Divergence div, double alpha, Aggregation agg) {
  if (student.size() != teacher.size()) throw InputError("distillation: student/teacher position counts differ");
  if (mask.weights.size() != student.size()) throw InputError("distillation: mask length differs from positions");
  if (div == Divergence::JSD) check_alpha(alpha);
  double total = 0.0;
  double weight = 0.0;
  for (std::size_t t = 0; t < student.size(); ++t) {
    const double m = mask.weights[t];
    if (m == 0.0) continue;
    total += m * position_divergence(student[t], teacher[t], div, alpha);
    weight += m;
  }
  if (agg == Aggregation::MeanUnmasked) return weight > 0.0 ? total / weight : 0.0;
  return total;
}

double sdpo_loss(std::span<const TokenDistribution> student, std::span<const TokenDistribution> teacher,
                 Divergence div, double alpha, Aggregation agg) {
  if (student.empty()) throw InputError("sdpo_loss: need at least one position");
  return rosd_loss(student, teacher, all_ones_mask(static_cast<int>(student.size())), div, alpha, agg);
}

DistillGrad distill_from_logits(std::span<const double> student_logits, std::span<const double> teacher_logits,
                                int length, int vocab, std::span<const double> mask, const DistillSettings& st) {
  const auto T = static_cast<std::size_t>(length);
  const auto V = static_cast<std::size_t>(vocab);
  if (student_logits.size() != T * V || teacher_logits.size() != T * V) {
    throw InputError("distill_from_logits: logits shape mismatch");
  }
  if (mask.size() != T) throw InputError("distill_from_logits: mask length mismatch");
  if (st.divergence == Divergence::JSD) check_alpha(st.alpha);
  if (st.top_k < 1) throw ConfigError("top-k must be >= 1");

  DistillGrad out;
  out.student.assign(T * V, 0.0);
  out.teacher.assign(T * V, 0.0);
  const double alpha = st.alpha;
  std::vector<int> identity(V);
  std::iota(identity.begin(), identity.end(), 0);
  std::vector<double> tp(V);
  double weight_sum = 0.0;

  for (std::size_t t = 0; t < T; ++t) {
    const double w = mask[t];
    if (w == 0.0) continue;
    ++out.active_positions;
    weight_sum += w;
    const double* zs = student_logits.data() + t * V;
    const double* zt = teacher_logits.data() + t * V;

    const double tmax = *std::max_element(zt, zt + V);
    double tsum = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
      tp[i] = std::exp(zt[i] - tmax);
      tsum += tp[i];
    }
    for (auto& v : tp) v /= tsum;

    std::vector<int> support;
    if (static_cast<std::size_t>(st.top_k) >= V) {
      support = identity;
    } else {
      support = topk_indices(tp, identity, st.top_k);
    }
    const std::size_t n = support.size();
    std::vector<double> tq(n), lt(n), ls(n), s(n), g(n);
    double kept = 0.0;
    for (std::size_t j = 0; j < n; ++j) kept += tp[static_cast<std::size_t>(support[j])];
    double smax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      tq[j] = tp[static_cast<std::size_t>(support[j])] / kept;
      lt[j] = safe_log(tq[j]);
      smax = std::max(smax, zs[support[j]]);
    }
    double ssum = 0.0;
    for (std::size_t j = 0; j < n; ++j) ssum += std::exp(zs[support[j]] - smax);
    const double lse = smax + std::log(ssum);
    for (std::size_t j = 0; j < n; ++j) {
      ls[j] = zs[support[j]] - lse;
      s[j] = std::exp(ls[j]);
    }

    double value = 0.0;
    double* grow = out.student.data() + t * V;
    if (st.divergence == Divergence::RKL) {
      for (std::size_t j = 0; j < n; ++j) {
        if (tq[j] > 0.0) value += tq[j] * (lt[j] - ls[j]);
        grow[support[j]] = w * (s[j] - tq[j]);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        if (st.divergence == Divergence::FKL) {
          value += s[j] * (ls[j] - lt[j]);
          g[j] = ls[j] - lt[j];
        } else {
          const double lm = safe_log(alpha * s[j] + (1.0 - alpha) * tq[j]);
          value += alpha * s[j] * (ls[j] - lm);
          if (tq[j] > 0.0) value += (1.0 - alpha) * tq[j] * (lt[j] - lm);
          g[j] = alpha * (ls[j] - lm);
        }
      }
      double mean_g = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean_g += s[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) grow[support[j]] = w * s[j] * (g[j] - mean_g);
    }
    out.loss += w * value;
  }
  if (st.aggregation == Aggregation::MeanUnmasked && weight_sum > 0.0) {
    out.loss /= weight_sum;
    for (auto& v : out.student) v /= weight_sum;
  }
  return out;
}

}  // namespace rosd
