#include "sge/sge_module.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sge {

void SGEConfig::validate() const {
  if (d_e < 1 || d_g < 1 || d_t < 1)
    throw std::invalid_argument("SGEConfig: widths must be positive");
  if (mp_layers < 0) throw std::invalid_argument("SGEConfig: mp_layers must be >= 0");
  if (mp_heads < 1 || prompt_heads < 1)
    throw std::invalid_argument("SGEConfig: head counts must be >= 1");
  if (d_g % mp_heads != 0 || d_g % prompt_heads != 0)
    throw std::invalid_argument("SGEConfig: d_g must be divisible by the head counts");
  if (sample_points_cap < 1)
    throw std::invalid_argument("SGEConfig: sample_points_cap must be >= 1");
}

SGEParams make_sge_params(ParamStore& store, const SGEConfig& cfg, const SGEOptions& opts,
                          std::set<int> stages, std::uint64_t master_seed) {
  cfg.validate();
  SGEParams p;
  const double se = 1.0 / std::sqrt(static_cast<double>(cfg.d_e));
  p.in_w = add_param(store, "sge.in.w", {cfg.d_e, cfg.d_g}, stages, Init::gaussian, se,
                     master_seed);
  p.in_b = add_param(store, "sge.in.b", {cfg.d_g}, stages, Init::zeros, 0.0, master_seed);
  if (opts.message_passing) {
    p.mp.reserve(static_cast<std::size_t>(cfg.mp_layers));
    for (int i = 0; i < cfg.mp_layers; ++i) {
      p.mp.push_back(make_transformer_layer(store, "sge.mp.L" + std::to_string(i), cfg.d_g,
                                            2, stages, master_seed));
    }
  }
  if (opts.prompt_injection) {
    p.has_prompt = true;
    p.prompt_lnq_g =
        add_param(store, "sge.prompt.lnq.g", {cfg.d_g}, stages, Init::ones, 0.0, master_seed);
    p.prompt_lnq_b =
        add_param(store, "sge.prompt.lnq.b", {cfg.d_g}, stages, Init::zeros, 0.0, master_seed);
    p.prompt_lnkv_g =
        add_param(store, "sge.prompt.lnkv.g", {cfg.d_t}, stages, Init::ones, 0.0, master_seed);
    p.prompt_lnkv_b =
        add_param(store, "sge.prompt.lnkv.b", {cfg.d_t}, stages, Init::zeros, 0.0, master_seed);
    p.prompt_attn = make_attention_params(store, "sge.prompt.attn", cfg.d_g, cfg.d_t, cfg.d_g,
                                          cfg.d_g, stages, master_seed);
  }
  return p;
}

std::vector<std::vector<std::pair<double, double>>> mask_sample_points(
    const std::vector<std::vector<std::uint8_t>>& masks, std::int64_t h_m, std::int64_t w_m,
    std::int64_t h_v, std::int64_t w_v, std::int64_t cap) {
  if (h_m < 1 || w_m < 1 || h_v < 1 || w_v < 1)
    throw std::invalid_argument("mask_sample_points: degenerate grid");
  if (cap < 1) throw std::invalid_argument("mask_sample_points: cap must be >= 1");
  const double sx = static_cast<double>(w_v) / static_cast<double>(w_m);
  const double sy = static_cast<double>(h_v) / static_cast<double>(h_m);
  std::vector<std::vector<std::pair<double, double>>> points(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& mask = masks[i];
    if (static_cast<std::int64_t>(mask.size()) != h_m * w_m)
      throw std::invalid_argument("mask_sample_points: mask size mismatch for entity " +
                                  std::to_string(i));
    std::vector<std::pair<double, double>> pts;
    for (std::int64_t py = 0; py < h_m; ++py) {
      for (std::int64_t px = 0; px < w_m; ++px) {
        if (!mask[static_cast<std::size_t>(py * w_m + px)]) continue;
        double fx = (static_cast<double>(px) + 0.5) * sx - 0.5;
        double fy = (static_cast<double>(py) + 0.5) * sy - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(w_v - 1));
        fy = std::clamp(fy, 0.0, static_cast<double>(h_v - 1));
        pts.emplace_back(fx, fy);
      }
    }
    if (pts.empty())
      throw std::invalid_argument("mask_sample_points: empty mask for entity " +
                                  std::to_string(i));
    const auto total = static_cast<std::int64_t>(pts.size());
    if (total > cap) {
      std::vector<std::pair<double, double>> kept;
      kept.reserve(static_cast<std::size_t>(cap));
      for (std::int64_t k = 0; k < cap; ++k)
        kept.push_back(pts[static_cast<std::size_t>(k * total / cap)]);
      pts = std::move(kept);
    }
    points[i] = std::move(pts);
  }
  return points;
}

Tensor pool_mask_features(const Tensor& fmap,
                          const std::vector<std::vector<std::uint8_t>>& masks,
                          std::int64_t h_m, std::int64_t w_m, std::int64_t cap) {
  if (fmap.ndim() != 3)
    throw std::invalid_argument("pool_mask_features: expected [d,h,w] map, got " +
                                shape_str(fmap.shape()));
  return pool_points(fmap, mask_sample_points(masks, h_m, w_m, fmap.dim(1), fmap.dim(2), cap));
}

SceneGraph build_graph(const Tensor& pooled, const SGEParams& params) {
  SceneGraph g;
  g.node_features = add_rowvec(matmul(pooled, params.in_w), params.in_b);
  g.activated = false;
  return g;
}

SceneGraph message_pass(const SceneGraph& g, const SGEParams& params, const SGEConfig& cfg) {
  if (g.activated) throw std::logic_error("message_pass: graph already activated");
  Tensor x = g.node_features;
  for (const auto& layer : params.mp) x = transformer_layer(x, layer, cfg.mp_heads, false);
  return SceneGraph{x, false};
}

SceneGraph inject_prompt(const SceneGraph& g, const Tensor& prompt, const SGEParams& params,
                         const SGEConfig& cfg, PromptAttention* attn) {
  if (g.activated) throw std::logic_error("inject_prompt: graph already activated");
  if (!params.has_prompt)
    throw std::logic_error("inject_prompt: params built without prompt injection");
  if (!prompt.defined() || prompt.dim(0) < 1)
    throw std::invalid_argument("inject_prompt: activation requires at least one prompt token");
  Tensor q_in = layer_norm(g.node_features, params.prompt_lnq_g, params.prompt_lnq_b);
  Tensor kv_in = layer_norm(prompt, params.prompt_lnkv_g, params.prompt_lnkv_b);
  AttentionResult r = multi_head_attention(q_in, kv_in, params.prompt_attn, cfg.prompt_heads);
  if (attn) attn->head_rows = r.head_attn;
  return SceneGraph{add(g.node_features, r.out), true};
}

SceneGraph sge_forward(const Tensor& fmap, const std::vector<std::vector<std::uint8_t>>& masks,
                       std::int64_t h_m, std::int64_t w_m, const Tensor& prompt,
                       const SGEParams& params, const SGEConfig& cfg, PromptAttention* attn) {
  cfg.validate();
  if (fmap.ndim() != 3 || fmap.dim(0) != cfg.d_e)
    throw std::invalid_argument("sge_forward: feature map must be [d_e,h,w], got " +
                                shape_str(fmap.shape()));
  Tensor pooled = pool_mask_features(fmap, masks, h_m, w_m, cfg.sample_points_cap);
  SceneGraph g = build_graph(pooled, params);
  if (!params.mp.empty()) g = message_pass(g, params, cfg);
  if (params.has_prompt) {
    g = inject_prompt(g, prompt, params, cfg, attn);
  } else {
    g.activated = true;
  }
  return g;
}

}  // namespace sge
