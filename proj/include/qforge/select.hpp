#pragma once

#include <string>
#include <vector>

#include "qforge/rollout.hpp"

namespace qforge {

// Below the threshold a sample offers too little headroom for hardening;
// the default keeps items the model solves reliably (12 of 16). The
// threshold stays configurable rather than hard-coded.
struct SelectionConfig {
  int min_pass_for_selection = 12;
  int n_rollouts = 16;
};

inline void validate_selection_config(const SelectionConfig& cfg) {
  if (cfg.n_rollouts < 1)
    throw ConfigError("selection: n_rollouts must be >= 1");
  if (cfg.min_pass_for_selection < 0 ||
      cfg.min_pass_for_selection > cfg.n_rollouts)
    throw ConfigError("selection: threshold must be in [0, n_rollouts]");
}

// Pure filter: ids with pass_count >= threshold, input order preserved so
// downstream runs are reproducible without shuffling.
inline std::vector<std::string> select_seeds(
    const std::vector<RolloutResult>& rollouts, const SelectionConfig& cfg) {
  validate_selection_config(cfg);
  std::vector<std::string> selected;
  for (const auto& r : rollouts) {
    if (r.n_rollouts != cfg.n_rollouts)
      throw ConfigError("selection: rollout for '" + r.sample_id + "' has N=" +
                        std::to_string(r.n_rollouts) + ", config expects N=" +
                        std::to_string(cfg.n_rollouts));
    if (r.pass_count >= cfg.min_pass_for_selection)
      selected.push_back(r.sample_id);
  }
  return selected;
}

inline std::vector<std::size_t> pass_histogram(
    const std::vector<RolloutResult>& rollouts, int n) {
  std::vector<std::size_t> hist(static_cast<std::size_t>(n) + 1, 0);
  for (const auto& r : rollouts) {
    if (r.pass_count >= 0 && r.pass_count <= n)
      ++hist[static_cast<std::size_t>(r.pass_count)];
  }
  return hist;
}

inline json selection_manifest(const SelectionConfig& cfg,
                               const std::vector<std::string>& selected) {
  return json{{"config",
               {{"min_pass_for_selection", cfg.min_pass_for_selection},
                {"n_rollouts", cfg.n_rollouts}}},
              {"selected", selected}};
}

inline void write_selection_manifest(const std::filesystem::path& path,
                                     const SelectionConfig& cfg,
                                     const std::vector<std::string>& selected) {
  write_text_file(path, selection_manifest(cfg, selected).dump(2) + "\n");
}

}  // namespace qforge
