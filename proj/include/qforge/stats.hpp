#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "qforge/dataset.hpp"
#include "qforge/rollout.hpp"

namespace qforge {

// Reasoning-step counting heuristic: the text inside the think span is split
// on newlines and on sentence-final punctuation (./!/? followed by
// whitespace or end-of-text, so decimals stay intact); non-empty segments
// are counted. Without think tags the whole text is used. There is no
// canonical definition of a "reasoning step", hence the knobs.
struct StepRules {
  std::string think_open = "<think>";
  std::string think_close = "</think>";
  bool split_on_newline = true;
  bool split_on_sentence_punct = true;
};

inline int count_reasoning_steps(std::string_view text,
                                 const StepRules& rules = {}) {
  if (text.empty()) return 0;
  std::string_view span = text;
  std::size_t open = text.find(rules.think_open);
  if (open != std::string_view::npos) {
    std::size_t begin = open + rules.think_open.size();
    std::size_t close = text.find(rules.think_close, begin);
    span = close == std::string_view::npos
               ? text.substr(begin)
               : text.substr(begin, close - begin);
  }

  int segments = 0;
  bool in_segment = false;
  for (std::size_t i = 0; i < span.size(); ++i) {
    char c = span[i];
    bool boundary = false;
    if (rules.split_on_newline && c == '\n') boundary = true;
    if (rules.split_on_sentence_punct && (c == '.' || c == '!' || c == '?')) {
      bool at_end = i + 1 >= span.size();
      if (at_end ||
          std::isspace(static_cast<unsigned char>(span[i + 1])))
        boundary = true;
    }
    if (boundary) {
      in_segment = false;
      continue;
    }
    if (!std::isspace(static_cast<unsigned char>(c)) && !in_segment) {
      in_segment = true;
      ++segments;
    }
  }
  return segments;
}

struct StatsReport {
  double mean_pass = 0.0;
  std::vector<std::size_t> histogram;  // index = pass count, 0..N inclusive
  double mean_reasoning_steps = 0.0;
  std::size_t sample_count = 0;
  int n_rollouts = 0;
};

// Mean pass count, exact frequency table over 0..N, and the mean
// reasoning-step count over every recorded rollout response.
inline StatsReport compute_stats(
    const Dataset& d, const std::map<std::string, RolloutResult>& rollouts,
    const StepRules& steps = {}) {
  std::vector<std::string> missing;
  for (const auto& s : d.samples)
    if (!rollouts.count(s.id)) missing.push_back(s.id);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) {
      if (!ids.empty()) ids += ", ";
      ids += id;
    }
    throw ValidationError("missing rollout entries for: " + ids);
  }

  StatsReport report;
  report.sample_count = d.size();
  if (d.empty()) return report;

  int n = rollouts.at(d.samples.front().id).n_rollouts;
  report.n_rollouts = n;
  report.histogram.assign(static_cast<std::size_t>(n) + 1, 0);
  double pass_sum = 0.0;
  double step_sum = 0.0;
  std::size_t step_count = 0;
  for (const auto& s : d.samples) {
    const RolloutResult& r = rollouts.at(s.id);
    if (r.n_rollouts != n)
      throw ValidationError("mixed n_rollouts in rollout set (sample '" +
                            s.id + "')");
    pass_sum += r.pass_count;
    ++report.histogram[static_cast<std::size_t>(r.pass_count)];
    for (const auto& rec : r.per_rollout) {
      step_sum += count_reasoning_steps(rec.raw_text, steps);
      ++step_count;
    }
  }
  report.mean_pass = pass_sum / static_cast<double>(d.size());
  report.mean_reasoning_steps =
      step_count == 0 ? 0.0 : step_sum / static_cast<double>(step_count);
  return report;
}

inline void write_stats_csv(const StatsReport& report,
                            const std::filesystem::path& path) {
  std::string csv = "pass_count,frequency\n";
  for (std::size_t c = 0; c < report.histogram.size(); ++c)
    csv += std::to_string(c) + "," + std::to_string(report.histogram[c]) + "\n";
  write_text_file(path, csv);
}

}  // namespace qforge
