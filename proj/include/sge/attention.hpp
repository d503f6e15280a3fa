#pragma once

#include "sge/tensor.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace sge {

enum class Init { gaussian, zeros, ones };

// Registers a parameter whose initial values depend only on (master_seed,
// name), so models sharing a parameter name initialize it identically
// regardless of which other parameters exist.
Tensor add_param(ParamStore& store, const std::string& name, Shape shape,
                 std::set<int> trainable_in_stage, Init init, double scale,
                 std::uint64_t master_seed);

struct AttentionParams {
  Tensor wq, bq;
  Tensor wk;  // no key bias: softmax is invariant to a row-constant shift
  Tensor wv, bv;
  Tensor wo, bo;
};

struct AttentionResult {
  Tensor out;                     // [n_q, d_out]
  std::vector<Tensor> head_attn;  // per head, [n_q, n_kv], rows sum to 1
};

// Scaled dot-product multi-head attention. With causal=true (queries and
// keys must be the same sequence) a -1e30 additive mask suppresses attention
// to later positions; the suppressed weights underflow to exactly zero.
AttentionResult multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                                     const AttentionParams& p, int heads,
                                     bool causal = false);

AttentionParams make_attention_params(ParamStore& store, const std::string& prefix,
                                      std::int64_t d_q_in, std::int64_t d_kv_in,
                                      std::int64_t d, std::int64_t d_out,
                                      std::set<int> stages, std::uint64_t master_seed);

// Pre-norm transformer block: x + attn(ln1(x)), then + ffn(ln2(.)).
struct TransformerLayerParams {
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionParams attn;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

Tensor transformer_layer(const Tensor& x, const TransformerLayerParams& p, int heads,
                         bool causal);

TransformerLayerParams make_transformer_layer(ParamStore& store, const std::string& prefix,
                                              std::int64_t d, std::int64_t ffn_mult,
                                              std::set<int> stages,
                                              std::uint64_t master_seed);

}  // namespace sge
