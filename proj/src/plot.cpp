#include "rosd/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rosd/errors.hpp"

namespace rosd {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTrainMetrics[] = {"rollout_accuracy",     "loss",      "match_rate",
                                         "mean_normalized_error_position", "mean_response_length",
                                         "grad_norm"};
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

using Series = std::map<int, double>;  // step -> value

struct Run {
  std::string label;  // method part of the directory name
  std::string name;
  std::map<std::string, Series> metrics;
};

Run load_run(const fs::path& dir) {
  Run run;
  run.name = dir.filename().string();
  if (run.name.empty()) run.name = dir.parent_path().filename().string();
  const auto cut = run.name.rfind("-seed");
  run.label = cut == std::string::npos ? run.name : run.name.substr(0, cut);
  std::ifstream in(dir / "metrics.jsonl");
  if (!in) throw InputError("no metrics.jsonl in " + dir.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const int step = j.at("step").get<int>();
    if (j.value("type", "train") == "eval") {
      run.metrics["mean_at_k." + j.at("family").get<std::string>()][step] = j.at("mean_at_k").get<double>();
      continue;
    }
    for (const char* key : kTrainMetrics) {
      if (j.contains(key) && j[key].is_number()) run.metrics[key][step] = j[key].get<double>();
    }
  }
  return run;
}

// Trailing mean over records whose step lies in (s - window, s].
Series smooth(const Series& s, int window) {
  Series out;
  for (auto it = s.begin(); it != s.end(); ++it) {
    double sum = 0.0;
    int n = 0;
    for (auto jt = s.lower_bound(it->first - window + 1); jt != std::next(it); ++jt) {
      sum += jt->second;
      ++n;
    }
    out[it->first] = sum / n;
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::string render_svg(const std::string& metric, const std::map<std::string, std::vector<Series>>& groups,
                       const PlotOptions& opt) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [label, runs] : groups) {
    for (const auto& s : runs) {
      for (const auto& [x, y] : s) {
        xmin = std::min(xmin, static_cast<double>(x));
        xmax = std::max(xmax, static_cast<double>(x));
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double left = 60, right = 150, top = 30, bottom = 40;
  const double pw = opt.width - left - right;
  const double ph = opt.height - top - bottom;
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"18\">" << metric << " (rolling " << opt.window << ")</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << Y(y) + 4 << "\" text-anchor=\"end\">" << fmt(std::round(y * 1000) / 1000)
        << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    svg << "<text x=\"" << X(x) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << std::lround(x)
        << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << opt.height - 6 << "\" text-anchor=\"middle\">step</text>\n";

  std::size_t color = 0;
  for (const auto& [label, runs] : groups) {
    const std::string c = kPalette[color++ % std::size(kPalette)];
    std::set<int> steps;
    for (const auto& s : runs) {
      for (const auto& [x, y] : s) steps.insert(x);
    }
    std::vector<std::array<double, 3>> pts;  // x, mean, std
    for (int x : steps) {
      double sum = 0.0, sq = 0.0;
      int n = 0;
      for (const auto& s : runs) {
        const auto it = s.find(x);
        if (it == s.end()) continue;
        sum += it->second;
        sq += it->second * it->second;
        ++n;
      }
      const double mean = sum / n;
      pts.push_back({static_cast<double>(x), mean, std::sqrt(std::max(0.0, sq / n - mean * mean))});
    }
    if (pts.empty()) continue;
    svg << "<polygon fill=\"" << c << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (const auto& p : pts) svg << X(p[0]) << "," << Y(p[1] + p[2]) << " ";
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) svg << X((*it)[0]) << "," << Y((*it)[1] - (*it)[2]) << " ";
    svg << "\"/>\n<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.8\" points=\"";
    for (const auto& p : pts) svg << X(p[0]) << "," << Y(p[1]) << " ";
    svg << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(color - 1);
    svg << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << c << "\" stroke-width=\"3\"/>\n";
    svg << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << label << " (n=" << runs.size()
        << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string joined(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace

std::vector<std::string> available_metrics(const std::vector<fs::path>& run_dirs) {
  std::set<std::string> names(std::begin(kTrainMetrics), std::end(kTrainMetrics));
  for (const auto& d : run_dirs) {
    for (const auto& [name, s] : load_run(d).metrics) names.insert(name);
  }
  return {names.begin(), names.end()};
}

std::vector<fs::path> plot(const std::vector<fs::path>& run_dirs, const std::vector<std::string>& metrics,
                           const fs::path& out_dir, const PlotOptions& options) {
  if (run_dirs.empty()) throw InputError("plot: no run directories given");
  if (options.window < 1) throw ConfigError("plot: window must be >= 1");
  std::vector<Run> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  std::set<std::string> known(std::begin(kTrainMetrics), std::end(kTrainMetrics));
  for (const auto& r : runs) {
    for (const auto& [name, s] : r.metrics) known.insert(name);
  }
  const std::vector<std::string> listing(known.begin(), known.end());
  if (metrics.empty()) throw ConfigError("plot: no metric selected; available metrics: " + joined(listing));
  for (const auto& m : metrics) {
    if (!known.count(m)) throw ConfigError("plot: unknown metric '" + m + "'; available metrics: " + joined(listing));
  }

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& metric : metrics) {
    std::map<std::string, std::vector<Series>> groups;
    std::ostringstream csv;
    csv << "run,method,step,value,rolling_mean\n";
    for (const auto& r : runs) {
      const auto it = r.metrics.find(metric);
      if (it == r.metrics.end()) continue;
      const Series sm = smooth(it->second, options.window);
      for (const auto& [step, v] : it->second) {
        csv << r.name << "," << r.label << "," << step << "," << fmt(v) << "," << fmt(sm.at(step)) << "\n";
      }
      groups[r.label].push_back(sm);
    }
    std::string file = metric;
    std::replace(file.begin(), file.end(), '.', '_');
    const fs::path svg_path = out_dir / (file + ".svg");
    const fs::path csv_path = out_dir / (file + ".csv");
    std::ofstream(svg_path) << render_svg(metric, groups, options);
    std::ofstream(csv_path) << csv.str();
    written.push_back(svg_path);
    written.push_back(csv_path);
  }
  return written;
}

}  // namespace rosd
