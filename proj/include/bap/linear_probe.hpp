#pragma once

// Logistic regression on the last token's hidden state. Applied to every
// token, its sigmoid output doubles as a token-level localization score.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bap/localize.hpp"
#include "bap/trainer.hpp"

namespace bap {

struct LinearProbe {
  std::vector<float> weight;  // d
  float bias = 0.0f;

  std::size_t dim() const { return weight.size(); }
  double logit(std::span<const float> token) const;

  friend bool operator==(const LinearProbe&, const LinearProbe&) = default;
};

/// Baseline defaults: 30 epochs, lr 1e-4, weight decay 0.1, batch 16.
TrainConfig linear_train_config();

struct LinearTrainResult {
  LinearProbe model;
  TrainReport report;
};

/// Zero-initialized weights; same split, shuffling and checkpoint-selection
/// rules as the attention probe.
LinearTrainResult train_linear_probe(const TrainConfig& config, const DetectionSet& data);

/// sigmoid(w . z_last + b).
double linear_detect(const LinearProbe& model, const Matrix& z);

/// sigmoid(w . z_t + b) for every token.
std::vector<double> linear_token_scores(const LinearProbe& model, const Matrix& z);

/// Token scores rescaled to sum to one, then grouped per line.
LineRanking linear_localize(const LinearProbe& model, const RepRecord& record);

double linear_detection_accuracy(const LinearProbe& model, std::span<const DetectionSample> samples,
                                 std::span<const std::size_t> indices);

}  // namespace bap
