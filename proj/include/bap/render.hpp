#pragma once

// Line-weight heatmaps. Scores are divided by the sample's maximum line score
// and bucketed into ten intensity classes, 0 (lightest) to 9 (darkest).

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bap {

class RenderError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kIntensityClasses = 10;

/// min(9, floor(10 * score / max)); all zeros when max <= 0.
std::vector<int> intensity_classes(std::span<const double> line_scores);

struct HeatmapInput {
  std::string sample_id;
  std::vector<std::string> lines;
  std::vector<double> line_scores;
};

/// 256-colour terminal rendering, one source line per output line.
std::string render_ansi(const HeatmapInput& input);

/// Self-contained HTML page holding one table per sample.
std::string render_html(std::span<const HeatmapInput> inputs);

}  // namespace bap
