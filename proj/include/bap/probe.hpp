#pragma once

// Attention probe: one grouped-query attention block over frozen hidden
// states, a GELU MLP classifier on the last token, and the head-averaged
// attention of the last token (a_bar) as token-level localization signal.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bap/autodiff.hpp"
#include "bap/matrix.hpp"

namespace bap {

struct ProbeConfig {
  std::size_t d_in = 32;
  std::size_t num_heads = 4;     // query heads M
  std::size_t num_kv_heads = 2;  // key/value heads G, divides M
  std::size_t head_dim = 16;
  std::size_t ff_dim = 64;
  bool use_block_residual_ln = true;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on zero dims or M % G != 0.
  void validate() const;
  std::size_t attn_width() const { return num_heads * head_dim; }
  std::size_t kv_width() const { return num_kv_heads * head_dim; }

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

/// Probe parameters in the fixed serialization order used by checkpoints.
/// Layer-norm parameters are empty (0x0) in the bare variant.
template <typename T>
struct ProbeParams {
  BasicMatrix<T> ln1_gain, ln1_bias;  // 1 x d_in
  BasicMatrix<T> w_q, b_q;            // d_in x M*dh, 1 x M*dh
  BasicMatrix<T> w_k, b_k;            // d_in x G*dh
  BasicMatrix<T> w_v, b_v;            // d_in x G*dh
  BasicMatrix<T> w_o, b_o;            // M*dh x d_in
  BasicMatrix<T> ln2_gain, ln2_bias;  // 1 x d_in
  BasicMatrix<T> w_ff1, b_ff1;        // d_in x d_ff
  BasicMatrix<T> w_ff2, b_ff2;        // d_ff x 1

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    visit([&](std::string_view, const BasicMatrix<T>& m) { n += m.size(); });
    return n;
  }

  template <typename U>
  ProbeParams<U> cast() const {
    ProbeParams<U> out;
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  std::vector<BasicMatrix<T>*> tensors() {
    std::vector<BasicMatrix<T>*> out;
    visit_all(*this, [&](std::string_view, BasicMatrix<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const BasicMatrix<T>*> tensors() const {
    std::vector<const BasicMatrix<T>*> out;
    visit_all(*this, [&](std::string_view, const BasicMatrix<T>& m) { out.push_back(&m); });
    return out;
  }

  friend bool operator==(const ProbeParams&, const ProbeParams&) = default;

 private:
  template <typename Self, typename F>
  static void visit_all(Self& s, F&& f) {
    f("ln1_gain", s.ln1_gain);
    f("ln1_bias", s.ln1_bias);
    f("w_q", s.w_q);
    f("b_q", s.b_q);
    f("w_k", s.w_k);
    f("b_k", s.b_k);
    f("w_v", s.w_v);
    f("b_v", s.b_v);
    f("w_o", s.w_o);
    f("b_o", s.b_o);
    f("ln2_gain", s.ln2_gain);
    f("ln2_bias", s.ln2_bias);
    f("w_ff1", s.w_ff1);
    f("b_ff1", s.b_ff1);
    f("w_ff2", s.w_ff2);
    f("b_ff2", s.b_ff2);
  }
  // Skips empty tensors.
  template <typename Self, typename F>
  static void visit_impl(Self& s, F&& f) {
    visit_all(s, [&](std::string_view name, auto& m) {
      if (m.size() != 0) f(name, m);
    });
  }
};

struct ProbeModel {
  ProbeConfig config;
  ProbeParams<float> params;

  friend bool operator==(const ProbeModel&, const ProbeModel&) = default;
};

/// Scaled-uniform init, bound 1/sqrt(fan_in), drawn in parameter order from
/// the config seed. Layer-norm gains start at 1 and biases at 0.
ProbeModel init_probe(const ProbeConfig& config);

struct ProbeOutput {
  double logit = 0.0;
  BasicMatrix<double> attn_last_row;  // M x T: a[m, -1, :]
  std::vector<double> a_bar;          // column mean of attn_last_row
};

class ProbeInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Nodes of one probe forward pass on a graph.
template <typename T>
struct ProbeTrace {
  ad::Tensor<T> logit;                     // 1 x 1
  std::vector<ad::Tensor<T>> attention;    // per query head, T x T (causal)
  ad::Tensor<T> block_out;                 // T x d_in, per-token block output
};

/// Builds the forward graph. `params` are registered as leaves that require
/// gradients iff `leaves` is non-null; the leaf handles are appended to it in
/// visit order.
template <typename T>
ProbeTrace<T> build_forward(const ProbeConfig& config, const ProbeParams<T>& params, const BasicMatrix<T>& z,
                            ad::Graph<T>& graph, std::vector<ad::Tensor<T>>* leaves = nullptr);

/// Inference in double precision.
ProbeOutput forward(const ProbeModel& model, const Matrix& z);

/// sigmoid(logit).
double detect(const ProbeModel& model, const Matrix& z);

/// Loss and per-parameter gradients (same layout as ProbeParams) for one sample.
template <typename T>
struct SampleGradient {
  T loss = T(0);
  T logit = T(0);
  ProbeParams<T> grads;
};

template <typename T>
SampleGradient<T> loss_and_gradient(const ProbeConfig& config, const ProbeParams<T>& params,
                                    const BasicMatrix<T>& z, int label);

/// Inference cost estimate in FLOPs (multiply-add counted as 2):
///   2*T*d_in*(M+2G)*dh          Q, K, V projections
/// + 2*M*T^2*dh*2                scores and weighted values
/// + 2*T*(M*dh)*d_in             output projection
/// + 2*(M*dh)*d_ff + 2*d_ff      classifier MLP on the last token
std::uint64_t flops_estimate(const ProbeConfig& config, std::uint64_t tokens);

}  // namespace bap
