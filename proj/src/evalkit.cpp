#include "bap/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>

#include "bap/random.hpp"
#include "json.hpp"

namespace bap {

using json = nlohmann::json;

namespace {

void require_truth(std::span<const std::int32_t> buggy_lines, std::size_t k, const char* what) {
  if (buggy_lines.empty()) throw EvalError(std::string(what) + ": ground truth has no buggy lines");
  if (k == 0) throw EvalError(std::string(what) + ": k must be >= 1");
}

std::size_t correct_in_top(std::span<const std::int32_t> order, std::span<const std::int32_t> buggy, std::size_t k) {
  const std::set<std::int32_t> truth(buggy.begin(), buggy.end());
  std::set<std::int32_t> seen;
  std::size_t hits = 0;
  const std::size_t n = std::min(k, order.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (truth.contains(order[i]) && seen.insert(order[i]).second) ++hits;
  }
  return hits;
}

}  // namespace

int top_k_hit(std::span<const std::int32_t> order, std::span<const std::int32_t> buggy_lines, std::size_t k) {
  require_truth(buggy_lines, k, "top_k_hit");
  return correct_in_top(order, buggy_lines, k) > 0 ? 1 : 0;
}

double precision_at_k(std::span<const std::int32_t> order, std::span<const std::int32_t> buggy_lines, std::size_t k) {
  require_truth(buggy_lines, k, "precision_at_k");
  const std::set<std::int32_t> truth(buggy_lines.begin(), buggy_lines.end());
  const std::size_t max_correct = std::min(k, truth.size());
  return static_cast<double>(correct_in_top(order, buggy_lines, k)) / static_cast<double>(max_correct);
}

double random_hit_probability(std::size_t lines, std::size_t buggy, std::size_t k) {
  if (lines == 0) throw EvalError("random baseline needs L >= 1");
  if (buggy > lines) throw EvalError("more buggy lines than lines");
  k = std::min(k, lines);
  // C(L-b, k) / C(L, k) = prod_{i<k} (L-b-i) / (L-i)
  double miss = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (lines - i <= buggy) {
      miss = 0.0;
      break;
    }
    miss *= static_cast<double>(lines - buggy - i) / static_cast<double>(lines - i);
  }
  return 1.0 - miss;
}

std::vector<std::int32_t> random_order(std::size_t lines, std::uint64_t seed) {
  std::vector<std::int32_t> order(lines);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::int32_t>(order));
  return order;
}

RandomBaseline random_baseline(std::size_t lines, std::span<const std::int32_t> buggy_lines, std::size_t k,
                               std::uint64_t seed, std::size_t trials) {
  if (lines == 0) throw EvalError("random baseline needs L >= 1");
  require_truth(buggy_lines, std::max<std::size_t>(k, 1), "random_baseline");
  if (trials == 0) throw EvalError("random baseline needs at least one trial");
  Rng rng(seed);
  std::vector<std::int32_t> order(lines);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::int32_t>(order));
    hits += static_cast<std::size_t>(top_k_hit(order, buggy_lines, k));
  }
  const std::set<std::int32_t> distinct(buggy_lines.begin(), buggy_lines.end());
  RandomBaseline out;
  out.monte_carlo = static_cast<double>(hits) / static_cast<double>(trials);
  out.exact = random_hit_probability(lines, distinct.size(), k);
  out.std_error = std::sqrt(out.exact * (1.0 - out.exact) / static_cast<double>(trials));
  return out;
}

// ---------------------------------------------------------------------------

SampleTruth truth_from(const CodeRecord& r) {
  return SampleTruth{r.sample_id, r.label, r.buggy_lines, split_lines(r.code).size(), std::nullopt};
}

SampleTruth truth_from(const RepRecord& r) {
  return SampleTruth{r.sample_id, r.label, r.buggy_lines, r.line_count(), std::nullopt};
}

EvalReport evaluate(std::span<const SamplePrediction> predictions, std::span<const SampleTruth> truth) {
  std::unordered_map<std::string, const SampleTruth*> truth_by_id;
  for (const auto& t : truth) {
    if (!truth_by_id.emplace(t.sample_id, &t).second) throw EvalError("duplicate truth id '" + t.sample_id + "'");
    if (t.label == 1 && t.buggy_lines.empty()) {
      throw EvalError("buggy sample '" + t.sample_id + "' has no ground-truth lines");
    }
  }
  std::unordered_map<std::string, const SamplePrediction*> pred_by_id;
  for (const auto& p : predictions) {
    if (!truth_by_id.contains(p.sample_id)) throw EvalError("prediction for unknown sample id '" + p.sample_id + "'");
    if (!pred_by_id.emplace(p.sample_id, &p).second) throw EvalError("duplicate prediction id '" + p.sample_id + "'");
  }

  EvalReport report;
  report.n_samples = truth.size();
  std::size_t det_total = 0, det_correct = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> buckets;  // index -> (count, hits)
  std::map<int, std::pair<std::size_t, std::size_t>> folds;

  for (const auto& t : truth) {
    const auto it = pred_by_id.find(t.sample_id);
    const SamplePrediction* pred = it == pred_by_id.end() ? nullptr : it->second;
    if (pred && pred->probability) {
      ++det_total;
      const int predicted = *pred->probability > 0.5 ? 1 : 0;
      if (predicted == t.label) ++det_correct;
    }
    if (t.label != 1) continue;
    if (!pred) throw EvalError("no prediction for buggy sample '" + t.sample_id + "'");

    SampleRow row;
    row.sample_id = t.sample_id;
    row.loc = t.loc;
    static const std::vector<std::int32_t> kEmpty;
    const auto& order = pred->order ? *pred->order : kEmpty;
    for (std::size_t k : kTopK) row.hit[k] = top_k_hit(order, t.buggy_lines, k);
    for (std::size_t k : kPrecisionK) row.precision[k] = precision_at_k(order, t.buggy_lines, k);

    const std::size_t bucket = t.loc == 0 ? 0 : (t.loc - 1) / 10;
    buckets[bucket].first += 1;
    buckets[bucket].second += static_cast<std::size_t>(row.hit[1]);
    if (t.fold) {
      folds[*t.fold].first += 1;
      folds[*t.fold].second += static_cast<std::size_t>(row.hit[1]);
    }
    report.rows.push_back(std::move(row));
  }

  report.n_buggy_samples = report.rows.size();
  const double n = static_cast<double>(report.rows.size());
  for (std::size_t k : kTopK) {
    double acc = 0.0;
    for (const auto& r : report.rows) acc += r.hit.at(k);
    report.top_k_accuracy[k] = report.rows.empty() ? 0.0 : acc / n;
  }
  for (std::size_t k : kPrecisionK) {
    double acc = 0.0;
    for (const auto& r : report.rows) acc += r.precision.at(k);
    report.precision_at_k[k] = report.rows.empty() ? 0.0 : acc / n;
  }
  if (det_total > 0) report.detection_accuracy = static_cast<double>(det_correct) / static_cast<double>(det_total);
  for (const auto& [b, ch] : buckets) {
    report.length_buckets.push_back(
        BucketStat{b * 10 + 1, b * 10 + 10, ch.first, static_cast<double>(ch.second) / static_cast<double>(ch.first)});
  }
  for (const auto& [f, ch] : folds) {
    report.fold_top1[f] = static_cast<double>(ch.second) / static_cast<double>(ch.first);
  }
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["n_samples"] = n_samples;
  j["n_buggy_samples"] = n_buggy_samples;
  for (const auto& [k, v] : top_k_accuracy) j["top_k_accuracy"][std::to_string(k)] = v;
  for (const auto& [k, v] : precision_at_k) j["precision_at_k"][std::to_string(k)] = v;
  j["detection_accuracy"] = detection_accuracy ? json(*detection_accuracy) : json(nullptr);
  j["length_buckets"] = json::array();
  for (const auto& b : length_buckets) {
    j["length_buckets"].push_back({{"loc_min", b.lo}, {"loc_max", b.hi}, {"count", b.count}, {"top1", b.top1}});
  }
  if (!fold_top1.empty()) {
    for (const auto& [f, v] : fold_top1) j["fold_top1"][std::to_string(f)] = v;
  }
  j["samples"] = json::array();
  for (const auto& r : rows) {
    json row{{"sample_id", r.sample_id}, {"loc", r.loc}};
    for (const auto& [k, v] : r.hit) row["hit@" + std::to_string(k)] = v;
    for (const auto& [k, v] : r.precision) row["P@" + std::to_string(k)] = v;
    j["samples"].push_back(std::move(row));
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %10zu\n", "samples", n_samples);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s %10zu\n", "buggy samples", n_buggy_samples);
  out += buf;
  for (const auto& [k, v] : top_k_accuracy) {
    std::snprintf(buf, sizeof buf, "%-22s %10.4f\n", ("top-" + std::to_string(k) + " accuracy").c_str(), v);
    out += buf;
  }
  for (const auto& [k, v] : precision_at_k) {
    std::snprintf(buf, sizeof buf, "%-22s %10.4f\n", ("P@" + std::to_string(k)).c_str(), v);
    out += buf;
  }
  if (detection_accuracy) {
    std::snprintf(buf, sizeof buf, "%-22s %10.4f\n", "detection accuracy", *detection_accuracy);
    out += buf;
  } else {
    std::snprintf(buf, sizeof buf, "%-22s %10s\n", "detection accuracy", "n/a");
    out += buf;
  }
  if (!length_buckets.empty()) {
    out += "\n";
    std::snprintf(buf, sizeof buf, "%-12s %8s %10s\n", "LOC", "count", "top-1");
    out += buf;
    for (const auto& b : length_buckets) {
      const std::string range = std::to_string(b.lo) + "-" + std::to_string(b.hi);
      std::snprintf(buf, sizeof buf, "%-12s %8zu %10.4f\n", range.c_str(), b.count, b.top1);
      out += buf;
    }
  }
  if (!fold_top1.empty()) {
    out += "\n";
    for (const auto& [f, v] : fold_top1) {
      std::snprintf(buf, sizeof buf, "fold %-7d %19.4f\n", f, v);
      out += buf;
    }
  }
  return out;
}

}  // namespace bap
