#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bap {

enum class OptimizerKind { AdamW, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double learning_rate = 1e-4;
  double weight_decay = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay over one flat parameter vector:
///   p <- p * (1 - lr * wd)
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// The SGD variant applies the same decoupled decay followed by p -= lr * g.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::size_t parameter_count);

  void step(std::span<float> parameters, std::span<const float> gradients);

  std::size_t steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<double> moment1_;
  std::vector<double> moment2_;
  std::size_t step_ = 0;
};

}  // namespace bap
