#include "bap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "bap/parallel.hpp"
#include "bap/random.hpp"
#include "json.hpp"

namespace bap {

using json = nlohmann::json;

DetectionSet to_detection_set(std::vector<RepRecord> records) {
  DetectionSet set;
  if (records.empty()) return set;
  set.layer_k = records.front().layer_k;
  const std::size_t dim = records.front().dim();
  set.samples.reserve(records.size());
  for (auto& r : records) {
    if (r.dim() != dim) {
      throw TrainingError("mixed hidden dimensions: '" + r.sample_id + "' has d=" + std::to_string(r.dim()) +
                          ", expected " + std::to_string(dim));
    }
    if (r.layer_k != set.layer_k) {
      throw TrainingError("mixed layers: '" + r.sample_id + "' is layer " + std::to_string(r.layer_k) +
                          ", expected " + std::to_string(set.layer_k));
    }
    set.samples.push_back(DetectionSample{std::move(r.sample_id), std::move(r.data), r.label});
  }
  return set;
}

DetectionSet load_detection_set(const Manifest& manifest) { return to_detection_set(load_all(manifest)); }

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in (0, 1)");
}

std::string TrainReport::to_json() const {
  json j;
  j["epochs"] = json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  }
  j["selected_epoch"] = selected_epoch;
  j["best_val_accuracy"] = best_val_accuracy;
  j["wall_seconds"] = wall_seconds;
  j["train_samples"] = train_samples;
  j["val_samples"] = val_samples;
  return j.dump(2);
}

SplitIndices stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in (0, 1)");
  SplitIndices out;
  Rng rng = Rng::derived(seed, 0x5917);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw std::invalid_argument("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                                  " sample(s); stratified split needs at least 2");
    }
    rng.shuffle(std::span<std::size_t>(members));
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
    out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

double detection_accuracy(const ProbeModel& model, std::span<const DetectionSample> samples,
                          std::span<const std::size_t> indices, unsigned threads) {
  if (indices.empty()) return 0.0;
  std::vector<int> correct(indices.size(), 0);
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    const auto& s = samples[indices[i]];
    const int predicted = forward(model, s.z).logit > 0.0 ? 1 : 0;
    correct[i] = predicted == s.label ? 1 : 0;
  });
  std::size_t hits = 0;
  for (int c : correct) hits += static_cast<std::size_t>(c);
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

namespace {

std::vector<float> flatten(const ProbeParams<float>& p) {
  std::vector<float> flat;
  flat.reserve(p.scalar_count());
  p.visit([&](std::string_view, const Matrix& m) { flat.insert(flat.end(), m.values.begin(), m.values.end()); });
  return flat;
}

void unflatten(std::span<const float> flat, ProbeParams<float>& p) {
  std::size_t offset = 0;
  p.visit([&](std::string_view, Matrix& m) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), m.size(), m.values.begin());
    offset += m.size();
  });
}

}  // namespace

TrainResult train_probe(const ProbeConfig& probe_config, const TrainConfig& tc, const DetectionSet& data) {
  tc.validate();
  if (data.samples.empty()) throw TrainingError("training set is empty");
  const std::size_t dim = data.samples.front().z.cols;
  for (const auto& s : data.samples) {
    if (s.z.cols != dim) throw TrainingError("mixed hidden dimensions at '" + s.sample_id + "'");
  }
  if (probe_config.d_in != dim) {
    throw TrainingError("probe d_in=" + std::to_string(probe_config.d_in) + " but records have d=" + std::to_string(dim));
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<int> labels;
  labels.reserve(data.samples.size());
  for (const auto& s : data.samples) labels.push_back(s.label);
  const auto split = stratified_split(labels, tc.val_fraction, tc.seed);

  ProbeModel model = init_probe(probe_config);
  std::vector<float> flat = flatten(model.params);
  std::vector<double> grad_acc(flat.size());
  std::vector<float> grad(flat.size());
  Optimizer opt(OptimizerConfig{.kind = tc.optimizer, .learning_rate = tc.learning_rate, .weight_decay = tc.weight_decay},
                flat.size());
  Rng order_rng = Rng::derived(tc.seed, 0xe90c);

  TrainResult result;
  result.model = model;
  result.report.train_samples = split.train.size();
  result.report.val_samples = split.val.size();
  double best = -1.0;

  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      std::fill(grad_acc.begin(), grad_acc.end(), 0.0);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = data.samples[order[i]];
        const auto g = loss_and_gradient(model.config, model.params, s.z, s.label);
        if (!std::isfinite(g.loss)) {
          throw TrainingError("non-finite loss at sample '" + s.sample_id + "' (epoch " + std::to_string(epoch) + ")");
        }
        loss_sum += g.loss;
        std::size_t offset = 0;
        g.grads.visit([&](std::string_view, const Matrix& m) {
          for (float v : m.values) grad_acc[offset++] += v;
        });
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = static_cast<float>(grad_acc[k] * inv);
      opt.step(flat, grad);
      unflatten(flat, model.params);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    stats.val_accuracy = detection_accuracy(model, data.samples, split.val, tc.threads);
    result.report.epochs.push_back(stats);
    if (stats.val_accuracy > best) {
      best = stats.val_accuracy;
      result.model = model;
      result.report.selected_epoch = epoch;
      result.report.best_val_accuracy = stats.val_accuracy;
    }
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

SweepResult layer_sweep(std::span<const std::uint32_t> layers,
                        const std::function<DetectionSet(std::uint32_t)>& load_layer,
                        const ProbeConfig& probe_config, const TrainConfig& train_config) {
  if (layers.empty()) throw std::invalid_argument("layer_sweep: no candidate layers");
  SweepResult out;
  double best = -1.0;
  for (auto layer : layers) {
    const auto data = load_layer(layer);
    const auto trained = train_probe(probe_config, train_config, data);
    out.scores.push_back({layer, trained.report.best_val_accuracy});
    const double acc = trained.report.best_val_accuracy;
    if (acc > best || (acc == best && layer < out.best_layer)) {
      best = acc;
      out.best_layer = layer;
    }
  }
  return out;
}

}  // namespace bap
