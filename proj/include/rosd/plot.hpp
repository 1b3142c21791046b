#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rosd {

/// Train-record metrics plus one "mean_at_k.<FAMILY>" entry per evaluated family.
std::vector<std::string> available_metrics(const std::vector<std::filesystem::path>& run_dirs);

struct PlotOptions {
  int window = 10;  // rolling average over this many steps
  int width = 720;
  int height = 420;
};

/// Writes <metric>.svg and <metric>.csv into out_dir for every requested metric. Curves are
/// grouped by method (run directory name without its "-seed<k>" suffix); each group is drawn
/// as its seed mean with a +-1 std band. Empty or unknown metric names throw ConfigError
/// listing the available ones.
std::vector<std::filesystem::path> plot(const std::vector<std::filesystem::path>& run_dirs,
                                        const std::vector<std::string>& metrics,
                                        const std::filesystem::path& out_dir, const PlotOptions& options = {});

}  // namespace rosd
