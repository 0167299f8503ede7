#include "bap/probe.hpp"

#include "bap/random.hpp"

namespace bap {

void ProbeConfig::validate() const {
  if (d_in == 0 || num_heads == 0 || num_kv_heads == 0 || head_dim == 0 || ff_dim == 0) {
    throw std::invalid_argument("probe config: all dimensions must be >= 1");
  }
  if (num_heads % num_kv_heads != 0) {
    throw std::invalid_argument("probe config: query heads (" + std::to_string(num_heads) +
                                ") must be a multiple of key/value heads (" + std::to_string(num_kv_heads) + ")");
  }
}

ProbeModel init_probe(const ProbeConfig& config) {
  config.validate();
  ProbeModel model;
  model.config = config;
  auto& p = model.params;
  const std::size_t d = config.d_in, qw = config.attn_width(), kw = config.kv_width(), ff = config.ff_dim;
  if (config.use_block_residual_ln) {
    p.ln1_gain = Matrix(1, d, 1.0f);
    p.ln1_bias = Matrix(1, d, 0.0f);
    p.ln2_gain = Matrix(1, d, 1.0f);
    p.ln2_bias = Matrix(1, d, 0.0f);
  }
  p.w_q = Matrix(d, qw);
  p.b_q = Matrix(1, qw);
  p.w_k = Matrix(d, kw);
  p.b_k = Matrix(1, kw);
  p.w_v = Matrix(d, kw);
  p.b_v = Matrix(1, kw);
  p.w_o = Matrix(qw, d);
  p.b_o = Matrix(1, d);
  p.w_ff1 = Matrix(d, ff);
  p.b_ff1 = Matrix(1, ff);
  p.w_ff2 = Matrix(ff, 1);
  p.b_ff2 = Matrix(1, 1);

  Rng rng(config.seed);
  // fan_in of a bias is the fan_in of its weight matrix.
  const auto fill = [&](Matrix& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : m.values) v = static_cast<float>(rng.uniform(-bound, bound));
  };
  fill(p.w_q, d);
  fill(p.b_q, d);
  fill(p.w_k, d);
  fill(p.b_k, d);
  fill(p.w_v, d);
  fill(p.b_v, d);
  fill(p.w_o, qw);
  fill(p.b_o, qw);
  fill(p.w_ff1, d);
  fill(p.b_ff1, d);
  fill(p.w_ff2, ff);
  fill(p.b_ff2, ff);
  return model;
}

template <typename T>
ProbeTrace<T> build_forward(const ProbeConfig& config, const ProbeParams<T>& params, const BasicMatrix<T>& z,
                            ad::Graph<T>& graph, std::vector<ad::Tensor<T>>* leaves) {
  if (z.rows == 0) throw ProbeInputError("probe input has no tokens");
  if (z.cols != config.d_in) {
    throw ProbeInputError("probe expects hidden dimension " + std::to_string(config.d_in) + ", got " +
                          std::to_string(z.cols));
  }
  for (T v : z.values) {
    if (!std::isfinite(v)) throw ProbeInputError("probe input contains a non-finite value");
  }
  const bool track = leaves != nullptr;
  std::vector<ad::Tensor<T>> nodes;
  params.visit([&](std::string_view, const BasicMatrix<T>& m) {
    nodes.push_back(graph.leaf(m, track));
  });
  if (leaves) *leaves = nodes;

  std::size_t k = 0;
  const auto next = [&]() { return nodes.at(k++); };
  const bool block = config.use_block_residual_ln;
  ad::Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  if (block) {
    ln1_g = next();
    ln1_b = next();
  }
  auto w_q = next(), b_q = next(), w_k = next(), b_k = next(), w_v = next(), b_v = next();
  auto w_o = next(), b_o = next();
  if (block) {
    ln2_g = next();
    ln2_b = next();
  }
  auto w_ff1 = next(), b_ff1 = next(), w_ff2 = next(), b_ff2 = next();

  const std::size_t tokens = z.rows;
  const std::size_t dh = config.head_dim;
  const std::size_t group = config.num_heads / config.num_kv_heads;

  auto input = graph.constant(z);
  auto x = block ? ad::layer_norm(input, ln1_g, ln1_b) : input;
  auto q = ad::add_row(ad::matmul(x, w_q), b_q);
  auto kk = ad::add_row(ad::matmul(x, w_k), b_k);
  auto v = ad::add_row(ad::matmul(x, w_v), b_v);

  const auto mask = ad::causal_mask(tokens);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  ProbeTrace<T> trace;
  std::vector<ad::Tensor<T>> heads;
  std::vector<ad::Tensor<T>> kv_keys, kv_vals;
  for (std::size_t g = 0; g < config.num_kv_heads; ++g) {
    kv_keys.push_back(ad::transpose(ad::slice_cols(kk, g * dh, dh)));
    kv_vals.push_back(ad::slice_cols(v, g * dh, dh));
  }
  for (std::size_t m = 0; m < config.num_heads; ++m) {
    const std::size_t g = m / group;
    auto qm = ad::slice_cols(q, m * dh, dh);
    auto scores = ad::scale(ad::matmul(qm, kv_keys[g]), inv_sqrt_dh);
    auto attn = ad::softmax_rows(scores, &mask);
    trace.attention.push_back(attn);
    heads.push_back(ad::matmul(attn, kv_vals[g]));
  }
  auto merged = ad::concat_cols(std::span<const ad::Tensor<T>>(heads));
  auto attn_out = ad::add_row(ad::matmul(merged, w_o), b_o);

  ad::Tensor<T> last;
  if (block) {
    trace.block_out = ad::add(input, attn_out);
    last = ad::layer_norm(ad::slice_rows(trace.block_out, tokens - 1, 1), ln2_g, ln2_b);
  } else {
    trace.block_out = attn_out;
    last = ad::slice_rows(attn_out, tokens - 1, 1);
  }
  auto hidden = ad::gelu(ad::add_row(ad::matmul(last, w_ff1), b_ff1));
  trace.logit = ad::add_row(ad::matmul(hidden, w_ff2), b_ff2);
  return trace;
}

template ProbeTrace<float> build_forward(const ProbeConfig&, const ProbeParams<float>&, const BasicMatrix<float>&,
                                         ad::Graph<float>&, std::vector<ad::Tensor<float>>*);
template ProbeTrace<double> build_forward(const ProbeConfig&, const ProbeParams<double>&, const BasicMatrix<double>&,
                                          ad::Graph<double>&, std::vector<ad::Tensor<double>>*);

ProbeOutput forward(const ProbeModel& model, const Matrix& z) {
  const auto params = model.params.cast<double>();
  const auto zd = z.cast<double>();
  ad::Graph<double> graph;
  auto trace = build_forward(model.config, params, zd, graph);
  const std::size_t tokens = z.rows;
  const std::size_t heads = model.config.num_heads;
  ProbeOutput out;
  out.logit = trace.logit.item();
  out.attn_last_row = BasicMatrix<double>(heads, tokens);
  out.a_bar.assign(tokens, 0.0);
  for (std::size_t m = 0; m < heads; ++m) {
    const auto& a = trace.attention[m].values();
    for (std::size_t t = 0; t < tokens; ++t) out.attn_last_row(m, t) = a[(tokens - 1) * tokens + t];
  }
  for (std::size_t t = 0; t < tokens; ++t) {
    double acc = 0.0;
    for (std::size_t m = 0; m < heads; ++m) acc += out.attn_last_row(m, t);
    out.a_bar[t] = acc / static_cast<double>(heads);
  }
  return out;
}

double detect(const ProbeModel& model, const Matrix& z) { return ad::sigmoid(forward(model, z).logit); }

template <typename T>
SampleGradient<T> loss_and_gradient(const ProbeConfig& config, const ProbeParams<T>& params,
                                    const BasicMatrix<T>& z, int label) {
  ad::Graph<T> graph;
  std::vector<ad::Tensor<T>> leaves;
  auto trace = build_forward(config, params, z, graph, &leaves);
  auto loss = ad::bce_with_logits(trace.logit, label);
  graph.backward(loss);
  SampleGradient<T> out;
  out.loss = loss.item();
  out.logit = trace.logit.item();
  out.grads = params;
  std::size_t k = 0;
  out.grads.visit([&](std::string_view, BasicMatrix<T>& m) { m.values = leaves[k++].grad(); });
  return out;
}

template SampleGradient<float> loss_and_gradient(const ProbeConfig&, const ProbeParams<float>&,
                                                 const BasicMatrix<float>&, int);
template SampleGradient<double> loss_and_gradient(const ProbeConfig&, const ProbeParams<double>&,
                                                  const BasicMatrix<double>&, int);

std::uint64_t flops_estimate(const ProbeConfig& c, std::uint64_t tokens) {
  if (tokens == 0) throw std::invalid_argument("flops_estimate: T must be >= 1");
  const std::uint64_t t = tokens, d = c.d_in, m = c.num_heads, g = c.num_kv_heads, dh = c.head_dim, ff = c.ff_dim;
  return 2 * t * d * (m + 2 * g) * dh + 2 * m * t * t * dh * 2 + 2 * t * (m * dh) * d + 2 * (m * dh) * ff + 2 * ff;
}

}  // namespace bap
