#include "sge/llm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sge {

void LLMConfig::validate() const {
  if (vocab < 3) throw std::invalid_argument("LLMConfig: vocab must cover sentinels and tokens");
  if (d_llm < 1) throw std::invalid_argument("LLMConfig: d_llm must be positive");
  if (layers < 1) throw std::invalid_argument("LLMConfig: at least one decoder layer");
  if (heads < 1 || d_llm % heads != 0)
    throw std::invalid_argument("LLMConfig: d_llm must be divisible by heads");
  if (max_len < 1) throw std::invalid_argument("LLMConfig: max_len must be positive");
  if (ffn_mult < 1) throw std::invalid_argument("LLMConfig: ffn_mult must be positive");
}

LLMParams make_llm_params(ParamStore& store, const LLMConfig& cfg, bool with_sentinels,
                          std::set<int> stages_body, std::set<int> stages_sentinel,
                          std::uint64_t master_seed) {
  cfg.validate();
  const std::int64_t d = cfg.d_llm;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  LLMParams p;
  if (with_sentinels) {
    p.has_sentinels = true;
    p.sentinel_sg = add_param(store, "llm.sentinel_sg", {1, d}, stages_sentinel,
                              Init::gaussian, 0.5, master_seed);
    p.sentinel_text = add_param(store, "llm.sentinel_text", {1, d}, stages_sentinel,
                                Init::gaussian, 0.5, master_seed);
  }
  p.embed = add_param(store, "llm.embed", {cfg.vocab - 2, d}, stages_body, Init::gaussian, 0.5,
                      master_seed);
  p.pos = add_param(store, "llm.pos", {cfg.max_len, d}, stages_body, Init::gaussian, 0.1,
                    master_seed);
  p.layers.reserve(static_cast<std::size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i) {
    p.layers.push_back(make_transformer_layer(store, "llm.L" + std::to_string(i), d,
                                              cfg.ffn_mult, stages_body, master_seed));
  }
  p.lnf_g = add_param(store, "llm.final_ln.g", {d}, stages_body, Init::ones, 0.0, master_seed);
  p.lnf_b = add_param(store, "llm.final_ln.b", {d}, stages_body, Init::zeros, 0.0, master_seed);
  p.head_w = add_param(store, "llm.head.w", {d, cfg.vocab}, stages_body, Init::gaussian, sd,
                       master_seed);
  p.head_b = add_param(store, "llm.head.b", {cfg.vocab}, stages_body, Init::zeros, 0.0,
                       master_seed);
  return p;
}

Tensor embed_tokens(const LLMParams& params, const std::vector<int>& ids, int vocab) {
  std::vector<int> shifted;
  shifted.reserve(ids.size());
  for (int id : ids) {
    if (id < 2 || id >= vocab)
      throw std::invalid_argument("embed_tokens: id " + std::to_string(id) +
                                  " outside the ordinary-token range [2, " +
                                  std::to_string(vocab) + ")");
    shifted.push_back(id - 2);
  }
  return embed_rows(params.embed, shifted);
}

TokenSequence assemble_sequence(const Tensor& visual, const Tensor* graph, const Tensor& text,
                                const LLMParams& params, const std::vector<int>& text_ids,
                                std::int64_t answer_start, std::int64_t answer_len) {
  if (visual.ndim() != 2 || text.ndim() != 2)
    throw std::invalid_argument("assemble_sequence: segments must be 2D");
  const std::int64_t d = visual.dim(1);
  if (text.dim(1) != d)
    throw std::invalid_argument("assemble_sequence: segment widths disagree");
  const std::int64_t n_t = text.dim(0);
  if (n_t < 1) throw std::invalid_argument("assemble_sequence: text segment is empty");
  if (static_cast<std::int64_t>(text_ids.size()) != n_t)
    throw std::invalid_argument("assemble_sequence: text_ids do not match the text segment");
  if (answer_start < 0 || answer_len < 1 || answer_start + answer_len > n_t)
    throw std::invalid_argument("assemble_sequence: answer span out of range");

  TokenSequence seq;
  seq.n_v = visual.dim(0);
  seq.n_t = n_t;
  std::vector<Tensor> segments;
  segments.push_back(visual);
  if (graph) {
    if (!params.has_sentinels)
      throw std::logic_error("assemble_sequence: graph segment needs sentinel embeddings");
    if (graph->defined() && graph->dim(0) > 0 && graph->dim(1) != d)
      throw std::invalid_argument("assemble_sequence: graph width disagrees");
    seq.has_graph = true;
    seq.n_g = graph->defined() ? graph->dim(0) : 0;
    seq.sg_index = seq.n_v;
    seq.text_index = seq.n_v + 1 + seq.n_g;
    seq.text_start = seq.text_index + 1;
    segments.push_back(params.sentinel_sg);
    if (seq.n_g > 0) segments.push_back(*graph);
    segments.push_back(params.sentinel_text);
  } else {
    seq.text_start = seq.n_v;
  }
  segments.push_back(text);
  seq.embeddings = concat_rows(segments);

  const std::int64_t len = seq.embeddings.dim(0);
  seq.targets.assign(static_cast<std::size_t>(len), -1);
  seq.loss_mask.assign(static_cast<std::size_t>(len), 0);
  for (std::int64_t k = 0; k < n_t; ++k)
    seq.targets[static_cast<std::size_t>(seq.text_start + k)] = text_ids[static_cast<std::size_t>(k)];
  for (std::int64_t k = 0; k < answer_len; ++k)
    seq.loss_mask[static_cast<std::size_t>(seq.text_start + answer_start + k)] = 1;
  return seq;
}

Tensor llm_forward(const TokenSequence& seq, const LLMParams& params, const LLMConfig& cfg) {
  const std::int64_t len = seq.length();
  if (len < 1) throw std::invalid_argument("llm_forward: empty sequence");
  if (len > cfg.max_len)
    throw std::invalid_argument("llm_forward: sequence length " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  std::vector<int> positions(static_cast<std::size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(seq.embeddings, embed_rows(params.pos, positions));
  for (const auto& layer : params.layers)
    x = transformer_layer(x, layer, cfg.heads, /*causal=*/true);
  x = layer_norm(x, params.lnf_g, params.lnf_b);
  return add_rowvec(matmul(x, params.head_w), params.head_b);
}

Tensor autoregressive_loss(const Tensor& logits, const TokenSequence& seq) {
  if (logits.dim(0) != seq.length())
    throw std::invalid_argument("autoregressive_loss: logits/sequence length mismatch");
  return masked_nll_next(log_softmax_rows(logits), seq.targets, seq.loss_mask);
}

ProjectionParams make_projection_params(ParamStore& store, std::int64_t d_e, std::int64_t d_g,
                                        std::int64_t d_llm, bool with_graph,
                                        std::set<int> stages_visual, std::set<int> stages_graph,
                                        std::uint64_t master_seed) {
  ProjectionParams proj;
  const double se = 1.0 / std::sqrt(static_cast<double>(d_e));
  const double sg = 1.0 / std::sqrt(static_cast<double>(d_g));
  proj.wv_w = add_param(store, "proj.wv.w", {d_e, d_llm}, stages_visual, Init::gaussian, se,
                        master_seed);
  proj.wv_b = add_param(store, "proj.wv.b", {d_llm}, stages_visual, Init::zeros, 0.0,
                        master_seed);
  if (with_graph) {
    proj.has_graph = true;
    proj.wg_w = add_param(store, "proj.wg.w", {d_g, d_llm}, stages_graph, Init::gaussian, sg,
                          master_seed);
    proj.wg_b = add_param(store, "proj.wg.b", {d_llm}, stages_graph, Init::zeros, 0.0,
                          master_seed);
  }
  return proj;
}

Tensor project_visual(const Tensor& fmap, const ProjectionParams& proj) {
  return add_rowvec(matmul(spatial_to_rows(fmap), proj.wv_w), proj.wv_b);
}

Tensor project_graph(const SceneGraph& g, const ProjectionParams& proj) {
  if (!g.activated) throw std::logic_error("project_graph: graph is not activated");
  if (!proj.has_graph) throw std::logic_error("project_graph: no graph projection registered");
  return add_rowvec(matmul(g.node_features, proj.wg_w), proj.wg_b);
}

}  // namespace sge
