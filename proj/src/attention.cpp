#include "sge/attention.hpp"

#include "sge/io_util.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace sge {

Tensor add_param(ParamStore& store, const std::string& name, Shape shape,
                 std::set<int> trainable_in_stage, Init init, double scale,
                 std::uint64_t master_seed) {
  Tensor t = Tensor::zeros(shape);
  if (init == Init::gaussian) {
    Rng rng(mix_seed(master_seed, fnv1a64(name)));
    auto& v = t.values_mut();
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.normal() * scale;
  } else if (init == Init::ones) {
    t.values_mut().setConstant(1.0);
  }
  t.set_requires_grad(true);
  store.add(name, t).trainable_in_stage = std::move(trainable_in_stage);
  return t;
}

AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                                     const AttentionParams& p, int heads, bool causal) {
  const std::int64_t d = p.wq.dim(1);
  if (heads <= 0 || d % heads != 0)
    throw std::invalid_argument("multi_head_attention: width not divisible by head count");
  const std::int64_t d_head = d / heads;
  const std::int64_t n_q = queries.dim(0);
  const std::int64_t n_kv = keys_values.dim(0);
  if (causal && n_q != n_kv)
    throw std::invalid_argument("multi_head_attention: causal mask needs square attention");

  Tensor q = add_rowvec(matmul(queries, p.wq), p.bq);
  Tensor k = matmul(keys_values, p.wk);
  Tensor v = add_rowvec(matmul(keys_values, p.wv), p.bv);

  Tensor mask;
  if (causal) {
    mask = Tensor::zeros({n_q, n_kv});
    MatMap m = mask.mat_mut();
    for (std::int64_t i = 0; i < n_q; ++i)
      for (std::int64_t j = i + 1; j < n_kv; ++j) m(i, j) = -1e30;
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Tensor> contexts;
  std::vector<Tensor> attns;
  contexts.reserve(static_cast<std::size_t>(heads));
  attns.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * d_head, d_head);
    Tensor kh = slice_cols(k, h * d_head, d_head);
    Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (causal) scores = add(scores, mask);
    Tensor attn = softmax_rows(scores);
    attns.push_back(attn);
    contexts.push_back(matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? contexts.front() : concat_cols(contexts);
  AttentionResult result;
  result.out = add_rowvec(matmul(merged, p.wo), p.bo);
  result.head_attn = std::move(attns);
  return result;
}

AttentionParams make_attention_params(ParamStore& store, const std::string& prefix,
                                      std::int64_t d_q_in, std::int64_t d_kv_in,
                                      std::int64_t d, std::int64_t d_out,
                                      std::set<int> stages, std::uint64_t master_seed) {
  const double sq = 1.0 / std::sqrt(static_cast<double>(d_q_in));
  const double skv = 1.0 / std::sqrt(static_cast<double>(d_kv_in));
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = add_param(store, prefix + ".wq", {d_q_in, d}, stages, Init::gaussian, sq, master_seed);
  p.bq = add_param(store, prefix + ".bq", {d}, stages, Init::zeros, 0.0, master_seed);
  p.wk = add_param(store, prefix + ".wk", {d_kv_in, d}, stages, Init::gaussian, skv, master_seed);
  p.wv = add_param(store, prefix + ".wv", {d_kv_in, d}, stages, Init::gaussian, skv, master_seed);
  p.bv = add_param(store, prefix + ".bv", {d}, stages, Init::zeros, 0.0, master_seed);
  p.wo = add_param(store, prefix + ".wo", {d, d_out}, stages, Init::gaussian, sd, master_seed);
  p.bo = add_param(store, prefix + ".bo", {d_out}, stages, Init::zeros, 0.0, master_seed);
  return p;
}

Tensor transformer_layer(const Tensor& x, const TransformerLayerParams& p, int heads,
                         bool causal) {
  Tensor normed = layer_norm(x, p.ln1_g, p.ln1_b);
  Tensor h = add(x, multi_head_attention(normed, normed, p.attn, heads, causal).out);
  Tensor normed2 = layer_norm(h, p.ln2_g, p.ln2_b);
  Tensor f1 = gelu(add_rowvec(matmul(normed2, p.ffn_w1), p.ffn_b1));
  Tensor f2 = add_rowvec(matmul(f1, p.ffn_w2), p.ffn_b2);
  return add(h, f2);
}

TransformerLayerParams make_transformer_layer(ParamStore& store, const std::string& prefix,
                                              std::int64_t d, std::int64_t ffn_mult,
                                              std::set<int> stages,
                                              std::uint64_t master_seed) {
  const std::int64_t d_ffn = d * ffn_mult;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(d_ffn));
  TransformerLayerParams p;
  p.ln1_g = add_param(store, prefix + ".ln1.g", {d}, stages, Init::ones, 0.0, master_seed);
  p.ln1_b = add_param(store, prefix + ".ln1.b", {d}, stages, Init::zeros, 0.0, master_seed);
  p.attn = make_attention_params(store, prefix + ".attn", d, d, d, d, stages, master_seed);
  p.ln2_g = add_param(store, prefix + ".ln2.g", {d}, stages, Init::ones, 0.0, master_seed);
  p.ln2_b = add_param(store, prefix + ".ln2.b", {d}, stages, Init::zeros, 0.0, master_seed);
  p.ffn_w1 = add_param(store, prefix + ".ffn.w1", {d, d_ffn}, stages, Init::gaussian, sd,
                       master_seed);
  p.ffn_b1 = add_param(store, prefix + ".ffn.b1", {d_ffn}, stages, Init::zeros, 0.0, master_seed);
  p.ffn_w2 = add_param(store, prefix + ".ffn.w2", {d_ffn, d}, stages, Init::gaussian, sf,
                       master_seed);
  p.ffn_b2 = add_param(store, prefix + ".ffn.b2", {d}, stages, Init::zeros, 0.0, master_seed);
  return p;
}

}  // namespace sge
