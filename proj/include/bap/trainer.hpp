#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bap/matrix.hpp"
#include "bap/optimizer.hpp"
#include "bap/probe.hpp"
#include "bap/repstore.hpp"

namespace bap {

/// What the trainer is allowed to see of a record: hidden states and the
/// sample-level label. Line-level ground truth has no field here.
struct DetectionSample {
  std::string sample_id;
  Matrix z;
  int label = 0;
};

struct DetectionSet {
  std::vector<DetectionSample> samples;
  std::uint32_t layer_k = 0;
};

/// Strips everything but hidden states and labels. Throws if records disagree
/// on d or layer_k.
DetectionSet to_detection_set(std::vector<RepRecord> records);
DetectionSet load_detection_set(const Manifest& manifest);

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  double weight_decay = 1.0;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  unsigned threads = 1;  // validation fan-out only

  /// Short schedule for noisy, quickly-overfitting data.
  static TrainConfig short_schedule() {
    TrainConfig c;
    c.epochs = 5;
    return c;
  }

  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int selected_epoch = 0;
  double best_val_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;

  std::string to_json() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified by label, deterministic per seed. Every class needs >= 2 samples
/// so that both sides receive at least one of it.
SplitIndices stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed);

struct TrainResult {
  ProbeModel model;
  TrainReport report;
};

/// Mean-BCE AdamW training with per-sample gradient accumulation; returns the
/// checkpoint with the best validation detection accuracy (ties -> earlier).
TrainResult train_probe(const ProbeConfig& probe_config, const TrainConfig& train_config, const DetectionSet& data);

/// Fraction of samples whose sign(logit) matches the label.
double detection_accuracy(const ProbeModel& model, std::span<const DetectionSample> samples,
                          std::span<const std::size_t> indices, unsigned threads = 1);

struct LayerScore {
  std::uint32_t layer = 0;
  double val_accuracy = 0.0;
};

struct SweepResult {
  std::vector<LayerScore> scores;
  std::uint32_t best_layer = 0;
};

/// Trains one probe per candidate layer with a shared seed and picks the
/// layer with the best validation accuracy (ties -> smaller layer index).
SweepResult layer_sweep(std::span<const std::uint32_t> layers,
                        const std::function<DetectionSet(std::uint32_t)>& load_layer,
                        const ProbeConfig& probe_config, const TrainConfig& train_config);

}  // namespace bap
