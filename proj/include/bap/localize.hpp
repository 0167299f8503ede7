#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bap/probe.hpp"
#include "bap/repstore.hpp"

namespace bap {

/// Line-level scores from token-level attention, and the lines ranked by score.
struct LineRanking {
  std::vector<double> line_scores;
  std::vector<std::int32_t> order;  // descending score, ties -> lower line index
  double coverage_mass = 0.0;       // attention on tokens that belong to a line
};

class LocalizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// l_i = sum of a_bar over tokens whose token_line is i, accumulated in token
/// order. Tokens with line -1 only reduce coverage_mass. `line_count` extends
/// the ranking with token-less lines (score 0); it defaults to 1 + max line.
LineRanking aggregate(std::span<const double> a_bar, std::span<const std::int32_t> token_line,
                      std::optional<std::size_t> line_count = std::nullopt);

/// Descending stable argsort: equal scores keep ascending index order.
std::vector<std::int32_t> rank_lines(std::span<const double> scores);

/// First min(k, L) entries of the order. k must be >= 1.
std::vector<std::int32_t> top_k(const LineRanking& ranking, std::size_t k);

/// forward -> aggregate for one record.
LineRanking localize_record(const ProbeModel& model, const RepRecord& record);

/// {"sample_id", "line_scores", "order", "coverage_mass"}; `order` truncated
/// to top_k when given. `probability` adds the detector output when present.
std::string ranking_to_json(const std::string& sample_id, const LineRanking& ranking,
                            std::optional<std::size_t> top_k = std::nullopt,
                            std::optional<double> probability = std::nullopt);

struct RankedSample {
  std::string sample_id;
  LineRanking ranking;
  std::optional<double> probability;
};

RankedSample ranking_from_json(const std::string& line);

}  // namespace bap
