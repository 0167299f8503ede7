#include "bap/localize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace bap {

using json = nlohmann::json;

std::vector<std::int32_t> rank_lines(std::span<const double> scores) {
  std::vector<std::int32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int32_t a, std::int32_t b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  return order;
}

LineRanking aggregate(std::span<const double> a_bar, std::span<const std::int32_t> token_line,
                      std::optional<std::size_t> line_count) {
  if (a_bar.size() != token_line.size()) {
    throw LocalizeError("aggregate: " + std::to_string(a_bar.size()) + " attention weights but " +
                        std::to_string(token_line.size()) + " token lines");
  }
  std::int32_t max_line = -1;
  for (std::size_t t = 0; t < a_bar.size(); ++t) {
    if (!(a_bar[t] >= 0.0) || !std::isfinite(a_bar[t])) {
      throw LocalizeError("aggregate: attention at token " + std::to_string(t) + " is negative or non-finite");
    }
    if (token_line[t] < -1) throw LocalizeError("aggregate: token line below -1 at token " + std::to_string(t));
    max_line = std::max(max_line, token_line[t]);
  }
  std::size_t lines = static_cast<std::size_t>(max_line + 1);
  if (line_count) {
    if (*line_count < lines) {
      throw LocalizeError("aggregate: line_count " + std::to_string(*line_count) + " smaller than referenced line " +
                          std::to_string(max_line));
    }
    lines = *line_count;
  }

  LineRanking out;
  out.line_scores.assign(lines, 0.0);
  for (std::size_t t = 0; t < a_bar.size(); ++t) {
    if (token_line[t] < 0) continue;
    out.line_scores[static_cast<std::size_t>(token_line[t])] += a_bar[t];
    out.coverage_mass += a_bar[t];
  }
  out.order = rank_lines(out.line_scores);
  return out;
}

std::vector<std::int32_t> top_k(const LineRanking& ranking, std::size_t k) {
  if (k == 0) throw LocalizeError("top_k: k must be >= 1");
  const std::size_t n = std::min(k, ranking.order.size());
  return {ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(n)};
}

LineRanking localize_record(const ProbeModel& model, const RepRecord& record) {
  if (record.dim() != model.config.d_in) {
    throw LocalizeError("record '" + record.sample_id + "' has d=" + std::to_string(record.dim()) +
                        " but the probe expects d=" + std::to_string(model.config.d_in));
  }
  const auto out = forward(model, record.data);
  return aggregate(out.a_bar, record.token_line);
}

std::string ranking_to_json(const std::string& sample_id, const LineRanking& ranking,
                            std::optional<std::size_t> k, std::optional<double> probability) {
  json j;
  j["sample_id"] = sample_id;
  j["line_scores"] = ranking.line_scores;
  j["order"] = k ? top_k(ranking, *k) : ranking.order;
  j["coverage_mass"] = ranking.coverage_mass;
  if (probability) j["probability"] = *probability;
  return j.dump();
}

RankedSample ranking_from_json(const std::string& line) {
  const auto j = json::parse(line);
  RankedSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.ranking.line_scores = j.at("line_scores").get<std::vector<double>>();
  s.ranking.order = j.at("order").get<std::vector<std::int32_t>>();
  s.ranking.coverage_mass = j.value("coverage_mass", 0.0);
  if (j.contains("probability")) s.probability = j.at("probability").get<double>();
  return s;
}

}  // namespace bap
