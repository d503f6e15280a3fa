#pragma once

#include "sge/attention.hpp"
#include "sge/tensor.hpp"

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

namespace sge {

struct SGEConfig {
  std::int64_t d_e = 16;  // pooled entity feature width
  std::int64_t d_g = 16;  // graph node width
  std::int64_t d_t = 16;  // prompt token width
  int mp_layers = 2;
  int mp_heads = 4;
  int prompt_heads = 4;
  std::int64_t sample_points_cap = 1024;
  void validate() const;
};

// Graph over the scene's entities. Starts raw; prompt injection (or its
// structural bypass) activates it. Only activated graphs may leave the module.
struct SceneGraph {
  Tensor node_features;  // [n, d_g]
  bool activated = false;
  std::int64_t n() const { return node_features.defined() ? node_features.dim(0) : 0; }
};

struct SGEParams {
  Tensor in_w, in_b;                       // d_e -> d_g input projection
  std::vector<TransformerLayerParams> mp;  // empty = message passing bypassed
  bool has_prompt = false;                 // false = prompt injection bypassed
  Tensor prompt_lnq_g, prompt_lnq_b;
  Tensor prompt_lnkv_g, prompt_lnkv_b;
  AttentionParams prompt_attn;
};

struct SGEOptions {
  bool message_passing = true;
  bool prompt_injection = true;
};

SGEParams make_sge_params(ParamStore& store, const SGEConfig& cfg, const SGEOptions& opts,
                          std::set<int> stages, std::uint64_t master_seed);

// Maps each mask's set pixels into feature-map sample coordinates: pixel
// centers scaled by (w_v/w_m, h_v/h_m) then shifted by -0.5, clamped to
// bounds. Masks larger than `cap` points are stratified-subsampled
// deterministically (indices floor(k*P/cap)). Empty mask -> error.
std::vector<std::vector<std::pair<double, double>>> mask_sample_points(
    const std::vector<std::vector<std::uint8_t>>& masks, std::int64_t h_m, std::int64_t w_m,
    std::int64_t h_v, std::int64_t w_v, std::int64_t cap);

// Row i = mean of bilinear samples of fmap over mask i's points. [n, d_e].
Tensor pool_mask_features(const Tensor& fmap,
                          const std::vector<std::vector<std::uint8_t>>& masks,
                          std::int64_t h_m, std::int64_t w_m, std::int64_t cap);

SceneGraph build_graph(const Tensor& pooled, const SGEParams& params);

// mp_layers pre-norm self-attention + feed-forward blocks over the nodes; no
// positional encoding over node index, so the result is permutation
// equivariant. Raw graphs only.
SceneGraph message_pass(const SceneGraph& g, const SGEParams& params, const SGEConfig& cfg);

struct PromptAttention {
  std::vector<Tensor> head_rows;  // per head, [n, n_t]; rows sum to 1
};

// Cross-attention with nodes as queries and prompt tokens as keys/values,
// residual into the node features; activates the graph. Requires n_t >= 1.
SceneGraph inject_prompt(const SceneGraph& g, const Tensor& prompt, const SGEParams& params,
                         const SGEConfig& cfg, PromptAttention* attn = nullptr);

// pool -> build -> message passing -> prompt injection. Params built without
// message passing or prompt injection skip that step structurally (the
// prompt bypass still activates the graph).
SceneGraph sge_forward(const Tensor& fmap, const std::vector<std::vector<std::uint8_t>>& masks,
                       std::int64_t h_m, std::int64_t w_m, const Tensor& prompt,
                       const SGEParams& params, const SGEConfig& cfg,
                       PromptAttention* attn = nullptr);

}  // namespace sge
