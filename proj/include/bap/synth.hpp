#pragma once

// Synthetic hidden-state datasets with planted line-level signal.
//
// Clean tokens are N(0, noise^2)^d. In the standard variant, every token on a
// buggy sample's planted lines receives +signal * mu. In the hard variant a
// buggy sample carries mu on one line and an orthogonal nu on a different
// line, while a clean sample carries exactly one of the two, so only the
// conjunction identifies a bug. Hard-variant plantings avoid the last source
// line.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bap/repstore.hpp"

namespace bap {

struct SynthConfig {
  std::size_t n_train = 2000;
  std::size_t n_test = 400;
  std::size_t d = 32;
  std::size_t lines_min = 3, lines_max = 12;
  std::size_t tokens_per_line_min = 2, tokens_per_line_max = 8;
  std::size_t buggy_lines_min = 1, buggy_lines_max = 3;
  double signal = 2.0;
  double noise = 1.0;
  bool hard = false;
  // Appends one fixed end-of-sequence token (token_line -1) to every sample,
  // the way an LLM tokenizer closes a sequence.
  bool end_token = true;
  std::uint32_t layer_k = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSplit {
  std::vector<RepRecord> records;
  std::vector<CodeRecord> code;  // placeholder source text, same ids and truth
};

struct SynthDataset {
  SynthConfig config;
  std::vector<float> mu;  // unit norm
  std::vector<float> nu;  // unit norm, orthogonal to mu (hard variant)
  SynthSplit train;
  SynthSplit test;
};

/// Deterministic per seed; each sample is drawn from its own derived stream.
SynthDataset generate(const SynthConfig& config);

/// generate() with hard = true.
SynthDataset hard_variant(SynthConfig config);

/// Writes <dir>/{train,test}/<id>.bapr, train.jsonl / test.jsonl manifests and
/// train_truth.jsonl / test_truth.jsonl code corpora.
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

/// Analytic localization oracle: token score mu . z_t, summed per line,
/// ranked descending (ties -> lower line).
std::vector<std::int32_t> oracle_order(const RepRecord& record, std::span<const float> mu);

}  // namespace bap
