#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rosd/errors.hpp"
#include "rosd/harness.hpp"
#include "rosd/plot.hpp"
#include "rosd/pretrain.hpp"

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Fills options that were not given on the command line from a flat "key = value" file.
void apply_config_file(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw rosd::ConfigError("cannot read config file " + path);
  std::stringstream text;
  text << in.rdbuf();
  for (const auto& [key, value] : rosd::parse_config_text(text.str())) {
    CLI::Option* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw rosd::ConfigError("unknown config key: " + key);
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-distillation and group policy optimization on synthetic reasoning tasks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write generated problems as JSON lines");
  std::string gen_family = "ARITH_CHAIN";
  std::uint64_t gen_seed = 0;
  int gen_n = 100;
  std::string gen_out;
  gen->add_option("--family", gen_family, "ARITH_CHAIN or STRING_TRANSFORM");
  gen->add_option("--seed", gen_seed);
  gen->add_option("--n", gen_n, "Number of problems");
  gen->add_option("--out", gen_out, "Output file (stdout when omitted)");

  auto* pre = app.add_subcommand("pretrain", "Supervised warm start of the base model");
  rosd::PretrainConfig pc;
  rosd::TrainConfig arch;
  std::string pre_out = "base.ckpt";
  std::string pre_config;
  pre->add_option("--config", pre_config, "Flat key = value file; command-line flags override it");
  pre->add_option("--out", pre_out, "Checkpoint path")->capture_default_str();
  pre->add_option("--seed", pc.seed)->capture_default_str();
  pre->add_option("--steps", pc.steps)->capture_default_str();
  pre->add_option("--batch", pc.batch)->capture_default_str();
  pre->add_option("--lr", pc.lr)->capture_default_str();
  pre->add_option("--warmup", pc.warmup)->capture_default_str();
  pre->add_option("--clean_steps", pc.clean_steps)->capture_default_str();
  pre->add_option("--student_noise", pc.student_noise)->capture_default_str();
  pre->add_option("--hint_noise", pc.hint_noise)->capture_default_str();
  pre->add_option("--w_reflect", pc.w_reflect)->capture_default_str();
  pre->add_option("--layers", arch.layers)->capture_default_str();
  pre->add_option("--width", arch.width)->capture_default_str();
  pre->add_option("--heads", arch.heads)->capture_default_str();
  pre->add_option("--mlp", arch.mlp)->capture_default_str();
  pre->add_option("--context", arch.context)->capture_default_str();

  auto* train = app.add_subcommand("train", "Run GRPO / SDPO / ROSD for every configured seed");
  std::string train_config;
  train->add_option("--config", train_config, "Flat key = value file; command-line flags override it");
  std::map<std::string, std::string> train_values;
  std::map<std::string, CLI::Option*> train_opts;
  const auto defaults = rosd::config_to_map(rosd::TrainConfig{});
  for (const auto& [key, value] : defaults) {
    train_opts[key] = train->add_option("--" + key, train_values[key], "default: " + value);
  }

  auto* eval = app.add_subcommand("eval", "mean@k of a checkpoint on fresh problems");
  std::string eval_ckpt;
  std::string eval_families = "ARITH_CHAIN,STRING_TRANSFORM";
  int eval_n = 32;
  int eval_k = 8;
  std::uint64_t eval_seed = 9001;
  double eval_temp = 1.0;
  int eval_max_len = 128;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--families", eval_families)->capture_default_str();
  eval->add_option("--n", eval_n, "Problems per family")->capture_default_str();
  eval->add_option("--k", eval_k, "Samples per problem")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Problem seed; sampling uses the same seed")->capture_default_str();
  eval->add_option("--temperature", eval_temp)->capture_default_str();
  eval->add_option("--max_len", eval_max_len)->capture_default_str();

  auto* plt = app.add_subcommand("plot", "Curves (SVG) and raw CSV from run directories");
  std::vector<std::string> plot_runs;
  std::vector<std::string> plot_metrics;
  std::string plot_out = "plots";
  int plot_window = 10;
  plt->add_option("--runs", plot_runs, "Run directories")->required();
  plt->add_option("--metrics", plot_metrics, "Metric names");
  plt->add_option("--out", plot_out)->capture_default_str();
  plt->add_option("--window", plot_window)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto problems = rosd::generate_problems(rosd::parse_family(gen_family), gen_seed, gen_n);
      const std::string text = rosd::problems_to_jsonl(problems);
      if (gen_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(gen_out) << text;
      }
    } else if (*pre) {
      apply_config_file(pre, pre_config);
      arch.validate();
      const auto model = rosd::pretrain(arch.model_config(), pc, [](int step, double loss) {
        std::cerr << "pretrain step " << step << " loss " << loss << "\n";
      });
      rosd::save_checkpoint(pre_out, model);
      std::cout << pre_out << "\n";
    } else if (*train) {
      apply_config_file(train, train_config);
      std::map<std::string, std::string> given;
      for (const auto& [key, opt] : train_opts) {
        if (opt->count() > 0) given[key] = train_values[key];
      }
      std::vector<rosd::Method> methods;
      if (given.count("method")) {
        for (const auto& m : split_commas(given["method"])) methods.push_back(rosd::parse_method(m));
        given["method"] = split_commas(given["method"]).front();
      }
      const rosd::TrainConfig config = rosd::config_from_map(given);
      if (methods.empty()) methods.push_back(config.method);
      for (const auto& dir : rosd::run_grid(config, methods)) std::cout << dir.string() << "\n";
    } else if (*eval) {
      const auto model = rosd::load_checkpoint(eval_ckpt);
      nlohmann::json out = nlohmann::json::object();
      for (const auto& f : split_commas(eval_families)) {
        const auto family = rosd::parse_family(f);
        const auto problems = rosd::generate_problems(family, eval_seed, eval_n);
        out[rosd::to_string(family)] = rosd::evaluate(model, problems, eval_k, eval_temp, eval_seed, eval_max_len);
      }
      out["k"] = eval_k;
      std::cout << out.dump(2) << "\n";
    } else if (*plt) {
      std::vector<std::filesystem::path> dirs(plot_runs.begin(), plot_runs.end());
      for (const auto& p : rosd::plot(dirs, plot_metrics, plot_out, rosd::PlotOptions{plot_window})) {
        std::cout << p.string() << "\n";
      }
    }
  } catch (const rosd::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
