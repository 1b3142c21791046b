#include "rosd/harness.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rosd/errors.hpp"
#include "rosd/prompts.hpp"
#include "rosd/rng.hpp"

namespace rosd {

namespace fs = std::filesystem;

namespace {

using Net = PolicyModel::Net;

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const std::string piece = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("config " + key + ": not a number: " + v);
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("config " + key + ": not an integer: " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError("config " + key + ": not a boolean: " + v);
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

// Student logits rows for one rollout (optionally tempered) as a T x V double buffer.
std::vector<double> rows_of(const Net::Mat& logits, Eigen::Index first, int T, double scale) {
  const auto V = static_cast<std::size_t>(logits.cols());
  std::vector<double> out(static_cast<std::size_t>(T) * V);
  for (int t = 0; t < T; ++t) {
    const float* row = logits.row(first + t).data();
    for (std::size_t v = 0; v < V; ++v) out[static_cast<std::size_t>(t) * V + v] = static_cast<double>(row[v]) * scale;
  }
  return out;
}

void add_rows(Net::Mat& d, Eigen::Index first, int T, const std::vector<double>& g, double scale) {
  const auto V = static_cast<std::size_t>(d.cols());
  for (int t = 0; t < T; ++t) {
    float* row = d.row(first + t).data();
    for (std::size_t v = 0; v < V; ++v) row[v] += static_cast<float>(g[static_cast<std::size_t>(t) * V + v] * scale);
  }
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw InputError("cannot append to " + path.string());
  const std::string full = line + "\n";
  out.write(full.data(), static_cast<std::streamsize>(full.size()));
  out.flush();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

// Keeps only records whose step is at most `last`; used when resuming.
void truncate_log(const fs::path& path, int last) {
  if (!fs::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string kept;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step") || j["step"].get<int>() > last) continue;
    kept += line + "\n";
  }
  write_file_atomic(path, kept);
}

std::optional<double> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::GRPO: return "GRPO";
    case Method::SDPO: return "SDPO";
    case Method::ROSD: return "ROSD";
  }
  return "ROSD";
}

Method parse_method(std::string_view name) {
  const std::string n = upper(trim(name));
  if (n == "GRPO") return Method::GRPO;
  if (n == "SDPO") return Method::SDPO;
  if (n == "ROSD") return Method::ROSD;
  throw ConfigError("unknown method: " + std::string(name));
}

std::string to_string(TeacherMode m) { return m == TeacherMode::Frozen ? "FROZEN" : "EMA"; }

TeacherMode parse_teacher_mode(std::string_view name) {
  const std::string n = upper(trim(name));
  if (n == "FROZEN") return TeacherMode::Frozen;
  if (n == "EMA") return TeacherMode::Ema;
  throw ConfigError("unknown teacher mode: " + std::string(name));
}

std::string to_string(SdpoContext c) { return c == SdpoContext::Rollout ? "ROLLOUT" : "ORACLE"; }

SdpoContext parse_sdpo_context(std::string_view name) {
  const std::string n = upper(trim(name));
  if (n == "ROLLOUT") return SdpoContext::Rollout;
  if (n == "ORACLE") return SdpoContext::Oracle;
  throw ConfigError("unknown SDPO context: " + std::string(name));
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  need(group_size >= 2, "group_size must be >= 2");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(steps >= 0, "steps must be >= 0");
  need(eval_every >= 1, "eval_every must be >= 1");
  need(eval_samples >= 1, "eval_samples must be >= 1");
  need(eval_problems >= 1, "eval_problems must be >= 1");
  need(train_pool >= batch_size, "train_pool must be >= batch_size");
  need(temperature > 0.0, "temperature must be > 0");
  need(max_len >= 1, "max_len must be >= 1");
  need(divergence != Divergence::JSD || (alpha > 0.0 && alpha < 1.0), "alpha must lie in (0, 1)");
  need(top_k >= 1, "top_k must be >= 1");
  need(eps_low >= 0.0 && eps_high >= 0.0, "clip epsilons must be >= 0");
  need(ema_tau >= 0.0 && ema_tau <= 1.0, "ema_tau must lie in [0, 1]");
  need(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  need(!seeds.empty(), "at least one seed is required");
  need(lr > 0.0, "lr must be > 0");
  need(clip_norm >= 0.0, "clip_norm must be >= 0");
  need(!eval_families.empty(), "eval_families must not be empty");
  need(layers >= 1 && width >= 1 && heads >= 1 && width % heads == 0 && (width / heads) % 2 == 0,
       "width must split into heads of even size");
  need(mlp >= 1 && context >= 2, "mlp and context must be positive");
  need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.vocab = grammar_tokenizer().size();
  m.layers = layers;
  m.width = width;
  m.heads = heads;
  m.mlp = mlp;
  m.context = context;
  return m;
}

std::map<std::string, std::string> config_to_map(const TrainConfig& c) {
  std::string families;
  for (auto f : c.eval_families) families += (families.empty() ? "" : ",") + to_string(f);
  std::string seeds;
  for (auto s : c.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  return {
      {"method", to_string(c.method)},
      {"train_family", to_string(c.train_family)},
      {"eval_families", families},
      {"group_size", std::to_string(c.group_size)},
      {"batch_size", std::to_string(c.batch_size)},
      {"steps", std::to_string(c.steps)},
      {"eval_every", std::to_string(c.eval_every)},
      {"eval_samples", std::to_string(c.eval_samples)},
      {"eval_problems", std::to_string(c.eval_problems)},
      {"train_pool", std::to_string(c.train_pool)},
      {"eval_seed", std::to_string(c.eval_seed)},
      {"temperature", fmt_double(c.temperature)},
      {"max_len", std::to_string(c.max_len)},
      {"divergence", to_string(c.divergence)},
      {"alpha", fmt_double(c.alpha)},
      {"top_k", std::to_string(c.top_k)},
      {"aggregation", to_string(c.aggregation)},
      {"eps_low", fmt_double(c.eps_low)},
      {"eps_high", fmt_double(c.eps_high)},
      {"advantage_mode", to_string(c.advantage_mode)},
      {"teacher_mode", to_string(c.teacher_mode)},
      {"ema_tau", fmt_double(c.ema_tau)},
      {"reflector_mode", to_string(c.reflector_mode)},
      {"sdpo_context", to_string(c.sdpo_context)},
      {"normalized_matching", c.normalized_matching ? "true" : "false"},
      {"lambda", fmt_double(c.lambda)},
      {"seeds", seeds},
      {"optimizer", to_string(c.optimizer)},
      {"lr", fmt_double(c.lr)},
      {"clip_norm", fmt_double(c.clip_norm)},
      {"layers", std::to_string(c.layers)},
      {"width", std::to_string(c.width)},
      {"heads", std::to_string(c.heads)},
      {"mlp", std::to_string(c.mlp)},
      {"context", std::to_string(c.context)},
      {"base_checkpoint", c.base_checkpoint},
      {"out_dir", c.out_dir},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
  };
}

TrainConfig config_from_map(const std::map<std::string, std::string>& values, TrainConfig c) {
  for (const auto& [key, raw] : values) {
    const std::string v = unquote(trim(raw));
    auto as_int = [&] { return static_cast<int>(parse_int(key, v)); };
    if (key == "method") c.method = parse_method(v);
    else if (key == "train_family") c.train_family = parse_family(v);
    else if (key == "eval_families") {
      c.eval_families.clear();
      for (const auto& f : split(v, ',')) c.eval_families.push_back(parse_family(f));
    } else if (key == "group_size") c.group_size = as_int();
    else if (key == "batch_size") c.batch_size = as_int();
    else if (key == "steps") c.steps = as_int();
    else if (key == "eval_every") c.eval_every = as_int();
    else if (key == "eval_samples") c.eval_samples = as_int();
    else if (key == "eval_problems") c.eval_problems = as_int();
    else if (key == "train_pool") c.train_pool = as_int();
    else if (key == "eval_seed") c.eval_seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "temperature") c.temperature = parse_double(key, v);
    else if (key == "max_len") c.max_len = as_int();
    else if (key == "divergence") c.divergence = parse_divergence(v);
    else if (key == "alpha") c.alpha = parse_double(key, v);
    else if (key == "top_k") c.top_k = as_int();
    else if (key == "aggregation") c.aggregation = parse_aggregation(v);
    else if (key == "eps_low") c.eps_low = parse_double(key, v);
    else if (key == "eps_high") c.eps_high = parse_double(key, v);
    else if (key == "advantage_mode") c.advantage_mode = parse_advantage_mode(v);
    else if (key == "teacher_mode") c.teacher_mode = parse_teacher_mode(v);
    else if (key == "ema_tau") c.ema_tau = parse_double(key, v);
    else if (key == "reflector_mode") c.reflector_mode = parse_reflector_mode(v);
    else if (key == "sdpo_context") c.sdpo_context = parse_sdpo_context(v);
    else if (key == "normalized_matching") c.normalized_matching = parse_bool(key, v);
    else if (key == "lambda") c.lambda = parse_double(key, v);
    else if (key == "seeds") {
      c.seeds.clear();
      for (const auto& s : split(v, ',')) c.seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
    } else if (key == "optimizer") c.optimizer = parse_optimizer(v);
    else if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "clip_norm") c.clip_norm = parse_double(key, v);
    else if (key == "layers") c.layers = as_int();
    else if (key == "width") c.width = as_int();
    else if (key == "heads") c.heads = as_int();
    else if (key == "mlp") c.mlp = as_int();
    else if (key == "context") c.context = as_int();
    else if (key == "base_checkpoint") c.base_checkpoint = v;
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "checkpoint_every") c.checkpoint_every = as_int();
    else throw ConfigError("unknown config key: " + key);
  }
  return c;
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_to_map(c)) out += k + " = " + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

nlohmann::json to_json(const StepMetrics& m) {
  nlohmann::json loc = nlohmann::json::array();
  for (const auto& r : m.localization) {
    loc.push_back({{"rollout_id", r.rollout_id}, {"k", r.k}, {"T", r.length}, {"match_kind", to_string(r.match_kind)}});
  }
  return nlohmann::json{{"type", "train"},
                        {"step", m.step},
                        {"rollout_accuracy", m.rollout_accuracy},
                        {"loss", m.loss},
                        {"match_rate", opt_json(m.match_rate)},
                        {"mean_normalized_error_position", opt_json(m.mean_normalized_error_position)},
                        {"mean_response_length", m.mean_response_length},
                        {"updated", m.updated},
                        {"distill_rollouts", m.distill_rollouts},
                        {"grpo_groups", m.grpo_groups},
                        {"grad_norm", m.grad_norm},
                        {"localization", loc}};
}

std::vector<DistillTarget> distill_targets(const TrainConfig& config, const Models& models,
                                           std::span<const Problem> problems, std::span<const RolloutGroup> groups,
                                           std::vector<LocalizationRecord>* localization) {
  std::vector<DistillTarget> out;
  if (config.method == Method::GRPO) return out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Problem& x = problems[g];
    const RolloutGroup& group = groups[g];
    if (config.method == Method::SDPO) {
      const auto ref = select_reference(group);
      if (!ref) continue;
      const std::string c = config.sdpo_context == SdpoContext::Rollout
                                ? group.rollouts[static_cast<std::size_t>(*ref)].text
                                : render_solution(x);
      const std::string ctx = build_teacher_context(x, c).text;
      for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
        out.push_back({g, i, ctx, all_ones_mask(group.rollouts[i].length())});
      }
      continue;
    }
    const auto reflections = run_reflector(config.reflector_mode, &models.reflector, x, group);
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      if (!reflections[i]) continue;
      const Reflection& r = *reflections[i];
      const Rollout& y = group.rollouts[i];
      DistillTarget target{g, i, build_teacher_context(x, r.key_idea).text, {}};
      if (y.reward == 1) {
        target.mask = build_mask(LocatedError{}, y.length(), true);
      } else if (r.error_quote && !r.error_quote->empty()) {
        const LocatedError loc = locate(*r.error_quote, y, LocateOptions{config.normalized_matching});
        target.mask = build_mask(loc, y.length(), false);
        if (localization) {
          localization->push_back({y.problem_id + "#" + std::to_string(y.index), loc.k, y.length(), loc.match_kind});
        }
      } else {
        target.mask = build_mask(LocatedError{}, y.length(), false);
      }
      out.push_back(std::move(target));
    }
  }
  return out;
}

ObjectiveResult compute_objective(const TrainConfig& config, const Models& models, std::span<const Problem> problems,
                                  std::span<const RolloutGroup> groups) {
  if (problems.size() != groups.size()) throw InputError("compute_objective: one group per problem is required");
  std::vector<LocalizationRecord> localization;
  auto targets = distill_targets(config, models, problems, groups, &localization);
  return objective_from_targets(config, models, problems, groups, std::move(targets), std::move(localization));
}

ObjectiveResult objective_from_targets(const TrainConfig& config, const Models& models,
                                       std::span<const Problem> problems, std::span<const RolloutGroup> groups,
                                       std::vector<DistillTarget> targets,
                                       std::vector<LocalizationRecord> localization) {
  if (problems.size() != groups.size()) throw InputError("compute_objective: one group per problem is required");
  ObjectiveResult res;
  res.grad.assign(models.student.net().num_params(), 0.0f);
  res.localization = std::move(localization);
  const int V = models.student.config().vocab;
  const int ctx_limit = models.student.config().context;
  std::erase_if(targets, [&](const DistillTarget& t) {
    const auto& y = groups[t.group].rollouts[t.rollout];
    return prefix_length(t.teacher_context) + y.length() > ctx_limit;
  });

  if (!res.localization.empty()) {
    std::vector<LocalizationSample> batch;
    for (const auto& r : res.localization) {
      batch.push_back({LocatedError{r.k, r.match_kind != MatchKind::None, r.match_kind, std::nullopt}, r.length});
    }
    const auto m = localization_metrics(batch);
    res.match_rate = m.match_rate;
    res.mean_normalized_error_position = m.mean_normalized_position;
  }

  std::vector<std::vector<double>> advantages(groups.size());
  std::vector<bool> grpo_group(groups.size(), false);
  const bool use_grpo = config.method == Method::GRPO || config.lambda > 0.0;
  if (use_grpo) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::vector<double> rewards;
      for (const auto& r : groups[g].rollouts) rewards.push_back(r.reward);
      advantages[g] = group_advantage(rewards, config.advantage_mode).advantages;
      grpo_group[g] = std::any_of(advantages[g].begin(), advantages[g].end(), [](double a) { return a != 0.0; });
    }
  }

  // Student rows for every rollout that enters a loss term.
  std::map<std::pair<std::size_t, std::size_t>, Eigen::Index> row_of;
  std::vector<std::vector<TokenId>> seqs;
  std::vector<std::pair<std::size_t, std::size_t>> order;
  auto want = [&](std::size_t g, std::size_t i) {
    if (row_of.count({g, i})) return;
    row_of[{g, i}] = -1;
    order.push_back({g, i});
  };
  for (const auto& t : targets) want(t.group, t.rollout);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!grpo_group[g]) continue;
    for (std::size_t i = 0; i < groups[g].rollouts.size(); ++i) want(g, i);
  }
  if (order.empty()) return res;

  Eigen::Index offset = 0;
  for (const auto& [g, i] : order) {
    const std::string ctx = prompts::student_context(problems[g]);
    seqs.push_back(model_input(ctx, groups[g].rollouts[i].token_ids));
    row_of[{g, i}] = offset + prefix_length(ctx) - 1;
    offset += static_cast<Eigen::Index>(seqs.back().size());
  }
  Net::Cache cache;
  const Net::Mat logits = models.student.net().forward(seqs, &cache);
  Net::Mat dlogits = Net::Mat::Zero(logits.rows(), logits.cols());

  const double n_rollouts = static_cast<double>(groups.size() * static_cast<std::size_t>(config.group_size));
  double distill_loss = 0.0;
  if (!targets.empty()) {
    std::vector<std::vector<TokenId>> tseqs;
    std::vector<Eigen::Index> tstart;
    Eigen::Index toff = 0;
    for (const auto& t : targets) {
      tseqs.push_back(model_input(t.teacher_context, groups[t.group].rollouts[t.rollout].token_ids));
      tstart.push_back(toff + prefix_length(t.teacher_context) - 1);
      toff += static_cast<Eigen::Index>(tseqs.back().size());
    }
    const Net::Mat tlogits = models.teacher.net().forward(tseqs, nullptr);
    const DistillSettings settings{config.divergence, config.alpha, config.top_k, config.aggregation};
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const auto& t = targets[j];
      const Rollout& y = groups[t.group].rollouts[t.rollout];
      const Eigen::Index srow = row_of.at({t.group, t.rollout});
      const auto s = rows_of(logits, srow, y.length(), 1.0);
      const auto tl = rows_of(tlogits, tstart[j], y.length(), 1.0);
      const DistillGrad d = distill_from_logits(s, tl, y.length(), V, t.mask.weights, settings);
      if (d.active_positions == 0) continue;
      distill_loss += d.loss / n_rollouts;
      add_rows(dlogits, srow, y.length(), d.student, 1.0 / n_rollouts);
      ++res.distill_rollouts;
    }
  }

  double grpo_total = 0.0;
  const double grpo_weight = config.method == Method::GRPO ? 1.0 : config.lambda;
  const double inv_temp = 1.0 / config.temperature;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!grpo_group[g]) continue;
    std::vector<std::vector<double>> zs, old;
    std::vector<std::vector<int>> toks;
    for (const auto& y : groups[g].rollouts) {
      zs.push_back(rows_of(logits, row_of.at({g, static_cast<std::size_t>(y.index)}), y.length(), inv_temp));
      toks.push_back(y.token_ids);
      old.push_back(y.sample_logprobs);
    }
    const auto r = grpo_loss_from_logits(zs, V, toks, old, advantages[g], config.eps_low, config.eps_high);
    const double w = grpo_weight / static_cast<double>(groups.size());
    grpo_total += r.loss / static_cast<double>(groups.size());
    for (const auto& y : groups[g].rollouts) {
      add_rows(dlogits, row_of.at({g, static_cast<std::size_t>(y.index)}), y.length(),
               r.grad[static_cast<std::size_t>(y.index)], w * inv_temp);
    }
    ++res.grpo_groups;
  }

  res.loss = config.method == Method::GRPO ? grpo_total : distill_loss + config.lambda * grpo_total;
  res.usable = res.distill_rollouts > 0 || res.grpo_groups > 0;
  if (res.usable) models.student.net().backward(cache, dlogits, res.grad);
  return res;
}

std::vector<Problem> step_problems(const TrainConfig& config, const std::vector<Problem>& pool, int step) {
  if (static_cast<int>(pool.size()) < config.batch_size) throw ConfigError("training pool smaller than batch size");
  Rng rng(derive_seed({config.seeds.front(), static_cast<std::uint64_t>(step), 7}));
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Problem> out;
  for (int b = 0; b < config.batch_size; ++b) {
    const auto j = static_cast<std::size_t>(b) + rng.below(idx.size() - static_cast<std::size_t>(b));
    std::swap(idx[static_cast<std::size_t>(b)], idx[j]);
    out.push_back(pool[idx[static_cast<std::size_t>(b)]]);
  }
  return out;
}

StepMetrics train_step(const TrainConfig& config, Models& models, Optimizer& optimizer,
                       std::span<const Problem> problems, int step) {
  const auto t0 = std::chrono::steady_clock::now();
  const SamplingSpec spec{config.group_size, config.temperature, config.max_len};
  const auto groups =
      sample_groups(models.student, problems, spec, derive_seed({config.seeds.front(), static_cast<std::uint64_t>(step), 1}));

  StepMetrics m;
  m.step = step;
  double correct = 0.0;
  double length = 0.0;
  double n = 0.0;
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      correct += r.reward;
      length += r.length();
      n += 1.0;
    }
  }
  m.rollout_accuracy = correct / n;
  m.mean_response_length = length / n;

  ObjectiveResult obj = compute_objective(config, models, problems, groups);
  m.loss = obj.loss;
  m.distill_rollouts = obj.distill_rollouts;
  m.grpo_groups = obj.grpo_groups;
  m.localization = std::move(obj.localization);
  m.match_rate = obj.match_rate;
  m.mean_normalized_error_position = obj.mean_normalized_error_position;
  if (obj.usable) {
    m.grad_norm = optimizer.step(models.student.net().params(), obj.grad);
    m.updated = true;
    if (config.teacher_mode == TeacherMode::Ema) ema_update(models.teacher, models.student, config.ema_tau);
  }
  if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm)) {
    throw ContractError("non-finite loss or gradient at step " + std::to_string(step));
  }
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

double mean_at_k(std::span<const RolloutGroup> groups) {
  if (groups.empty()) throw InputError("mean_at_k: no groups");
  double total = 0.0;
  for (const auto& g : groups) {
    if (g.rollouts.empty()) throw InputError("mean_at_k: empty group");
    total += static_cast<double>(g.correct.size()) / static_cast<double>(g.rollouts.size());
  }
  return total / static_cast<double>(groups.size());
}

double evaluate(const PolicyModel& model, std::span<const Problem> problems, int k, double temperature,
                std::uint64_t seed, int max_len) {
  if (problems.empty()) throw InputError("evaluate: empty problem set");
  if (k < 1) throw ConfigError("evaluate: k must be >= 1");
  const std::size_t chunk = std::max<std::size_t>(1, 128 / static_cast<std::size_t>(k));
  std::vector<RolloutGroup> groups;
  for (std::size_t start = 0; start < problems.size(); start += chunk) {
    const auto part = problems.subspan(start, std::min(chunk, problems.size() - start));
    const SamplingSpec spec{k, temperature, max_len};
    for (auto& g : sample_responses(model, part, spec, derive_seed({seed, start}))) groups.push_back(std::move(g));
  }
  return mean_at_k(groups);
}

fs::path run_directory(const TrainConfig& config, std::uint64_t seed) {
  return fs::path(config.out_dir) / (lower(to_string(config.method)) + "-seed" + std::to_string(seed));
}

RunLog read_metrics(const fs::path& metrics_jsonl) {
  RunLog log;
  std::istringstream in(read_file(metrics_jsonl));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("type") == "eval") {
      log.evals.push_back({j.at("step").get<int>(), parse_family(j.at("family").get<std::string>()),
                           j.at("mean_at_k").get<double>(), j.at("k").get<int>()});
      continue;
    }
    StepMetrics m;
    m.step = j.at("step").get<int>();
    m.rollout_accuracy = j.at("rollout_accuracy").get<double>();
    m.loss = j.at("loss").get<double>();
    m.match_rate = json_opt(j, "match_rate");
    m.mean_normalized_error_position = json_opt(j, "mean_normalized_error_position");
    m.mean_response_length = j.at("mean_response_length").get<double>();
    m.updated = j.value("updated", false);
    m.distill_rollouts = j.value("distill_rollouts", 0);
    m.grpo_groups = j.value("grpo_groups", 0);
    m.grad_norm = j.value("grad_norm", 0.0);
    for (const auto& r : j.value("localization", nlohmann::json::array())) {
      const std::string kind = r.at("match_kind").get<std::string>();
      m.localization.push_back({r.at("rollout_id").get<std::string>(), r.at("k").get<int>(), r.at("T").get<int>(),
                                kind == "EXACT" ? MatchKind::Exact
                                                : kind == "NORMALIZED" ? MatchKind::Normalized : MatchKind::None});
    }
    log.steps.push_back(std::move(m));
  }
  return log;
}

namespace {

std::optional<int> latest_checkpoint(const fs::path& dir) {
  const fs::path root = dir / "checkpoints";
  if (!fs::exists(root)) return std::nullopt;
  std::optional<int> best;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step-", 0) != 0 || !fs::exists(e.path() / "state.json")) continue;
    int n = 0;
    const auto r = std::from_chars(name.data() + 5, name.data() + name.size(), n);
    if (r.ec != std::errc() || r.ptr != name.data() + name.size()) continue;
    if (!best || n > *best) best = n;
  }
  return best;
}

void save_run_checkpoint(const fs::path& dir, int step, const Models& models, const Optimizer& opt) {
  const fs::path root = dir / "checkpoints";
  const fs::path final_dir = root / ("step-" + std::to_string(step));
  const fs::path tmp = root / ("step-" + std::to_string(step) + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_checkpoint(tmp / "student.ckpt", models.student);
  save_checkpoint(tmp / "teacher.ckpt", models.teacher);
  opt.save(tmp / "optimizer.bin");
  write_file_atomic(tmp / "state.json", nlohmann::json{{"step", step}}.dump() + "\n");
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
}

std::string eval_line(int step, Family family, double score, int k, bool in_domain) {
  return nlohmann::json{{"type", "eval"}, {"step", step},   {"family", to_string(family)},
                        {"mean_at_k", score}, {"k", k}, {"in_domain", in_domain}}
      .dump();
}

void write_summary(const fs::path& dir, const TrainConfig& c, std::uint64_t seed, std::uint64_t teacher_hash_start,
                   std::uint64_t teacher_hash_end) {
  const RunLog log = read_metrics(dir / "metrics.jsonl");
  nlohmann::json families = nlohmann::json::object();
  for (Family f : c.eval_families) {
    std::vector<const EvalRecord*> rs;
    for (const auto& e : log.evals) {
      if (e.family == f) rs.push_back(&e);
    }
    if (rs.empty()) continue;
    double best = 0.0;
    for (const auto* e : rs) best = std::max(best, e->mean_at_k);
    const std::size_t tail = std::min<std::size_t>(3, rs.size());
    double last3 = 0.0;
    for (std::size_t i = rs.size() - tail; i < rs.size(); ++i) last3 += rs[i]->mean_at_k;
    families[to_string(f)] = {{"initial_mean_at_k", rs.front()->mean_at_k},
                              {"final_mean_at_k", rs.back()->mean_at_k},
                              {"max_mean_at_k", best},
                              {"last3_mean_at_k", last3 / static_cast<double>(tail)},
                              {"in_domain", f == c.train_family}};
  }
  nlohmann::json summary{{"method", to_string(c.method)},
                         {"seed", seed},
                         {"steps", c.steps},
                         {"k", c.eval_samples},
                         {"train_family", to_string(c.train_family)},
                         {"families", families},
                         {"teacher_hash_start", teacher_hash_start},
                         {"teacher_hash_end", teacher_hash_end}};
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

fs::path run_one(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig c = base;
  c.seeds = {seed};
  c.validate();
  const fs::path dir = run_directory(c, seed);
  fs::create_directories(dir);

  auto comparable = [](const TrainConfig& x) {
    auto m = config_to_map(x);
    m.erase("out_dir");
    return m;
  };
  const fs::path snap = dir / "config.snapshot";
  if (fs::exists(snap)) {
    const auto previous = config_from_map(parse_config_text(read_file(snap)));
    if (comparable(previous) != comparable(c)) {
      throw ConfigError("run directory " + dir.string() + " holds a run with a different config");
    }
  } else {
    write_file_atomic(snap, config_to_text(c));
  }

  PolicyModel base_model = c.base_checkpoint.empty()
                               ? PolicyModel::random(c.model_config(), derive_seed({seed, 11}))
                               : load_checkpoint(c.base_checkpoint);
  if (!(base_model.config() == c.model_config())) {
    throw ConfigError("base checkpoint architecture does not match the config");
  }
  Models models{base_model.snapshot(Role::Student), base_model.snapshot(Role::Teacher),
                base_model.snapshot(Role::Reflector)};
  OptimizerConfig oc;
  oc.kind = c.optimizer;
  oc.lr = c.lr;
  oc.clip_norm = c.clip_norm;
  Optimizer optimizer(oc, models.student.net().num_params());
  const std::uint64_t teacher_hash_start = models.teacher.parameter_hash();

  const fs::path metrics = dir / "metrics.jsonl";
  const fs::path timing = dir / "timing.jsonl";
  int start = 1;
  if (const auto last = latest_checkpoint(dir)) {
    const fs::path ck = dir / "checkpoints" / ("step-" + std::to_string(*last));
    models.student = load_checkpoint(ck / "student.ckpt");
    models.teacher = load_checkpoint(ck / "teacher.ckpt");
    optimizer.load(ck / "optimizer.bin");
    truncate_log(metrics, *last);
    truncate_log(timing, *last);
    start = *last + 1;
  } else {
    fs::remove(metrics);
    fs::remove(timing);
  }

  std::map<Family, std::vector<Problem>> eval_sets;
  std::set<std::string> held_out;
  for (Family f : c.eval_families) {
    eval_sets[f] = generate_problems(f, c.eval_seed, c.eval_problems);
    for (const auto& p : eval_sets[f]) held_out.insert(p.prompt);
  }
  std::vector<Problem> pool;
  for (auto& p : generate_problems(c.train_family, derive_seed({seed, 21}), c.train_pool + c.eval_problems)) {
    if (!held_out.count(p.prompt) && static_cast<int>(pool.size()) < c.train_pool) pool.push_back(std::move(p));
  }

  auto run_evals = [&](int step) {
    const auto t0 = std::chrono::steady_clock::now();
    for (Family f : c.eval_families) {
      const double score = evaluate(models.student, eval_sets[f], c.eval_samples, c.temperature,
                                    derive_seed({seed, static_cast<std::uint64_t>(step), 2}), c.max_len);
      append_line(metrics, eval_line(step, f, score, c.eval_samples, f == c.train_family));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_line(timing, nlohmann::json{{"step", step}, {"eval_wall_time", secs}}.dump());
  };

  if (start == 1) run_evals(0);
  for (int step = start; step <= c.steps; ++step) {
    const auto problems = step_problems(c, pool, step);
    const StepMetrics m = train_step(c, models, optimizer, problems, step);
    append_line(metrics, to_json(m).dump());
    append_line(timing, nlohmann::json{{"step", step}, {"wall_time", m.wall_time}}.dump());
    if (step % c.eval_every == 0 || step == c.steps) run_evals(step);
    if (step % c.checkpoint_every == 0 || step == c.steps) save_run_checkpoint(dir, step, models, optimizer);
  }
  write_summary(dir, c, seed, teacher_hash_start, models.teacher.parameter_hash());
  return dir;
}

}  // namespace

std::vector<fs::path> run_experiment(const TrainConfig& config) {
  config.validate();
  std::vector<fs::path> dirs;
  for (auto seed : config.seeds) dirs.push_back(run_one(config, seed));
  return dirs;
}

std::vector<fs::path> run_grid(const TrainConfig& config, const std::vector<Method>& methods) {
  if (methods.empty()) throw ConfigError("run_grid: no methods selected");
  std::vector<fs::path> dirs;
  for (Method m : methods) {
    TrainConfig c = config;
    c.method = m;
    for (auto& d : run_experiment(c)) dirs.push_back(std::move(d));
  }
  return dirs;
}

}  // namespace rosd
