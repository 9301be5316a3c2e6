#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "qforge/jsonl.hpp"

namespace qforge {

struct HistogramSeries {
  std::string label;
  std::string color;  // e.g. "#4878d0"
  std::vector<std::size_t> freq;  // index = pass count
};

// Grouped bar chart over pass counts 0..N. Static SVG, no external plotting
// dependency; output is deterministic text.
inline void write_histogram_svg(const std::vector<HistogramSeries>& series,
                                const std::filesystem::path& path,
                                const std::string& title = "Pass counts",
                                const std::string& x_label = "pass count") {
  if (series.empty()) throw ValidationError("histogram needs at least one series");
  std::size_t buckets = 0;
  std::size_t max_freq = 1;
  for (const auto& s : series) {
    buckets = std::max(buckets, s.freq.size());
    for (std::size_t f : s.freq) max_freq = std::max(max_freq, f);
  }
  if (buckets == 0) throw ValidationError("histogram series are empty");

  const double width = 720.0, height = 420.0;
  const double left = 56.0, right = 16.0, top = 48.0, bottom = 48.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double group_w = plot_w / static_cast<double>(buckets);
  const double bar_w = group_w * 0.8 / static_cast<double>(series.size());

  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" "
                "font-size=\"16\" text-anchor=\"middle\">%s</text>\n",
                left + plot_w / 2, title.c_str());
  svg += buf;

  // y grid lines with labels at 5 ticks
  for (int tick = 0; tick <= 4; ++tick) {
    double frac = static_cast<double>(tick) / 4.0;
    double y = top + plot_h * (1.0 - frac);
    std::size_t value = static_cast<std::size_t>(
        frac * static_cast<double>(max_freq) + 0.5);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#dddddd\"/>\n",
                  left, y, left + plot_w, y);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"11\" text-anchor=\"end\">%zu</text>\n",
                  left - 6, y + 4, value);
    svg += buf;
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    for (std::size_t b = 0; b < series[s].freq.size(); ++b) {
      double h = plot_h * static_cast<double>(series[s].freq[b]) /
                 static_cast<double>(max_freq);
      double x = left + group_w * static_cast<double>(b) + group_w * 0.1 +
                 bar_w * static_cast<double>(s);
      double y = top + plot_h - h;
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" "
                    "height=\"%.2f\" fill=\"%s\"/>\n",
                    x, y, bar_w, h, series[s].color.c_str());
      svg += buf;
    }
  }

  // x axis labels (thinned when crowded)
  std::size_t stride = buckets > 24 ? buckets / 24 + 1 : 1;
  for (std::size_t b = 0; b < buckets; b += stride) {
    double x = left + group_w * (static_cast<double>(b) + 0.5);
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"11\" text-anchor=\"middle\">%zu</text>\n",
                  x, top + plot_h + 16, b);
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                "font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
                left + plot_w / 2, height - 12, x_label.c_str());
  svg += buf;

  // legend
  double lx = left + 8, ly = top + 8;
  for (const auto& s : series) {
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" "
                  "fill=\"%s\"/>\n<text x=\"%.1f\" y=\"%.1f\" "
                  "font-family=\"sans-serif\" font-size=\"12\">%s</text>\n",
                  lx, ly, s.color.c_str(), lx + 18, ly + 10, s.label.c_str());
    svg += buf;
    ly += 18;
  }
  svg += "</svg>\n";
  write_text_file(path, svg);
}

}  // namespace qforge
