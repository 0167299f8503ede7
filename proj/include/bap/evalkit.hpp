#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bap/localize.hpp"

namespace bap {

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 1 iff any of the first k predicted lines is a buggy line.
int top_k_hit(std::span<const std::int32_t> order, std::span<const std::int32_t> buggy_lines, std::size_t k);

/// |top_k ∩ buggy| / min(k, |buggy|).
double precision_at_k(std::span<const std::int32_t> order, std::span<const std::int32_t> buggy_lines, std::size_t k);

/// 1 - C(L - b, k) / C(L, k), with k clamped to L.
double random_hit_probability(std::size_t lines, std::size_t buggy, std::size_t k);

struct RandomBaseline {
  double monte_carlo = 0.0;
  double exact = 0.0;
  double std_error = 0.0;  // binomial standard error of the Monte-Carlo mean
};

/// Top-k hit rate of uniformly random line permutations.
RandomBaseline random_baseline(std::size_t lines, std::span<const std::int32_t> buggy_lines, std::size_t k,
                               std::uint64_t seed, std::size_t trials);

/// Uniformly random ranking of L lines.
std::vector<std::int32_t> random_order(std::size_t lines, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SampleTruth {
  std::string sample_id;
  int label = 0;
  std::vector<std::int32_t> buggy_lines;
  std::size_t loc = 0;              // lines of code, for length buckets
  std::optional<int> fold;          // precomputed cross-validation fold
};

struct SamplePrediction {
  std::string sample_id;
  std::optional<std::vector<std::int32_t>> order;  // nullopt: explicit miss
  std::optional<double> probability;               // bug probability, when available
};

inline constexpr std::size_t kTopK[] = {1, 3, 5};
inline constexpr std::size_t kPrecisionK[] = {2, 3, 5};

struct SampleRow {
  std::string sample_id;
  std::size_t loc = 0;
  std::map<std::size_t, int> hit;           // k -> 0/1
  std::map<std::size_t, double> precision;  // k -> P@k
};

struct BucketStat {
  std::size_t lo = 0;  // inclusive LOC range
  std::size_t hi = 0;
  std::size_t count = 0;
  double top1 = 0.0;
};

struct EvalReport {
  std::size_t n_samples = 0;
  std::size_t n_buggy_samples = 0;
  std::map<std::size_t, double> top_k_accuracy;
  std::map<std::size_t, double> precision_at_k;
  std::optional<double> detection_accuracy;
  std::vector<BucketStat> length_buckets;   // 10-LOC buckets
  std::map<int, double> fold_top1;          // only when folds are given
  std::vector<SampleRow> rows;              // buggy samples, truth order

  std::string to_json() const;
  std::string to_table() const;
};

/// Localization metrics over buggy samples, detection accuracy over all
/// samples that carry a probability. Every buggy truth sample needs a
/// prediction entry (an explicit miss is allowed); unknown ids are errors.
EvalReport evaluate(std::span<const SamplePrediction> predictions, std::span<const SampleTruth> truth);

SampleTruth truth_from(const CodeRecord& record);
SampleTruth truth_from(const RepRecord& record);

}  // namespace bap
