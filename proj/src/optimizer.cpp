#include "bap/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace bap {

Optimizer::Optimizer(OptimizerConfig config, std::size_t parameter_count)
    : config_(config), moment1_(parameter_count, 0.0), moment2_(parameter_count, 0.0) {
  if (!(config_.learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(config_.weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
}

void Optimizer::step(std::span<float> parameters, std::span<const float> gradients) {
  if (parameters.size() != moment1_.size() || gradients.size() != moment1_.size()) {
    throw std::invalid_argument("optimizer: parameter/gradient size mismatch");
  }
  ++step_;
  const double lr = config_.learning_rate;
  const double decay = 1.0 - lr * config_.weight_decay;

  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < parameters.size(); ++i) {
      double p = static_cast<double>(parameters[i]) * decay;
      p -= lr * static_cast<double>(gradients[i]);
      parameters[i] = static_cast<float>(p);
    }
    return;
  }

  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const double g = gradients[i];
    moment1_[i] = config_.beta1 * moment1_[i] + (1.0 - config_.beta1) * g;
    moment2_[i] = config_.beta2 * moment2_[i] + (1.0 - config_.beta2) * g * g;
    const double m_hat = moment1_[i] / bc1;
    const double v_hat = moment2_[i] / bc2;
    double p = static_cast<double>(parameters[i]) * decay;
    p -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    parameters[i] = static_cast<float>(p);
  }
}

}  // namespace bap
