#include "bap/linear_probe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "bap/optimizer.hpp"
#include "bap/random.hpp"

namespace bap {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::span<const float> last_row(const Matrix& z) { return z.row(z.rows - 1); }

}  // namespace

double LinearProbe::logit(std::span<const float> token) const {
  double acc = bias;
  for (std::size_t j = 0; j < weight.size(); ++j) acc += static_cast<double>(weight[j]) * token[j];
  return acc;
}

TrainConfig linear_train_config() {
  TrainConfig c;
  c.weight_decay = 0.1;
  return c;
}

double linear_detect(const LinearProbe& model, const Matrix& z) {
  if (z.rows == 0) throw std::invalid_argument("linear probe: empty sequence");
  if (z.cols != model.dim()) throw std::invalid_argument("linear probe: dimension mismatch");
  return sigmoid(model.logit(last_row(z)));
}

std::vector<double> linear_token_scores(const LinearProbe& model, const Matrix& z) {
  if (z.cols != model.dim()) throw std::invalid_argument("linear probe: dimension mismatch");
  std::vector<double> out(z.rows);
  for (std::size_t t = 0; t < z.rows; ++t) out[t] = sigmoid(model.logit(z.row(t)));
  return out;
}

LineRanking linear_localize(const LinearProbe& model, const RepRecord& record) {
  if (record.dim() != model.dim()) {
    throw LocalizeError("record '" + record.sample_id + "' has d=" + std::to_string(record.dim()) +
                        " but the linear probe expects d=" + std::to_string(model.dim()));
  }
  auto scores = linear_token_scores(model, record.data);
  double total = 0.0;
  for (double s : scores) total += s;
  if (total > 0.0) {
    for (double& s : scores) s /= total;
  }
  return aggregate(scores, record.token_line);
}

double linear_detection_accuracy(const LinearProbe& model, std::span<const DetectionSample> samples,
                                 std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto i : indices) {
    const int predicted = model.logit(last_row(samples[i].z)) > 0.0 ? 1 : 0;
    if (predicted == samples[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

LinearTrainResult train_linear_probe(const TrainConfig& tc, const DetectionSet& data) {
  tc.validate();
  if (data.samples.empty()) throw TrainingError("training set is empty");
  const std::size_t dim = data.samples.front().z.cols;
  for (const auto& s : data.samples) {
    if (s.z.cols != dim) throw TrainingError("mixed hidden dimensions at '" + s.sample_id + "'");
    if (s.z.rows == 0) throw TrainingError("empty sequence at '" + s.sample_id + "'");
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<int> labels;
  for (const auto& s : data.samples) labels.push_back(s.label);
  const auto split = stratified_split(labels, tc.val_fraction, tc.seed);

  // flat layout: weight[0..d), bias
  std::vector<float> flat(dim + 1, 0.0f);
  std::vector<double> acc(dim + 1);
  std::vector<float> grad(dim + 1);
  Optimizer opt(OptimizerConfig{.kind = tc.optimizer, .learning_rate = tc.learning_rate, .weight_decay = tc.weight_decay},
                flat.size());
  Rng order_rng = Rng::derived(tc.seed, 0xe90c);

  auto unpack = [&] {
    LinearProbe m;
    m.weight.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(dim));
    m.bias = flat[dim];
    return m;
  };

  LinearTrainResult result;
  result.model = unpack();
  result.report.train_samples = split.train.size();
  result.report.val_samples = split.val.size();
  double best = -1.0;

  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      std::fill(acc.begin(), acc.end(), 0.0);
      const LinearProbe current = unpack();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = data.samples[order[i]];
        const auto x = last_row(s.z);
        const double logit = current.logit(x);
        const double y = s.label;
        const double loss = std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
        if (!std::isfinite(loss)) {
          throw TrainingError("non-finite loss at sample '" + s.sample_id + "' (epoch " + std::to_string(epoch) + ")");
        }
        loss_sum += loss;
        const double r = sigmoid(logit) - y;
        for (std::size_t j = 0; j < dim; ++j) acc[j] += r * x[j];
        acc[dim] += r;
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = static_cast<float>(acc[k] * inv);
      opt.step(flat, grad);
    }
    const LinearProbe current = unpack();
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    stats.val_accuracy = linear_detection_accuracy(current, data.samples, split.val);
    result.report.epochs.push_back(stats);
    if (stats.val_accuracy > best) {
      best = stats.val_accuracy;
      result.model = current;
      result.report.selected_epoch = epoch;
      result.report.best_val_accuracy = stats.val_accuracy;
    }
  }
  result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace bap
