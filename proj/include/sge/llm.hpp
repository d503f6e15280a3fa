#pragma once

#include "sge/attention.hpp"
#include "sge/sge_module.hpp"
#include "sge/tensor.hpp"

#include <cstdint>
#include <set>
#include <vector>

namespace sge {

struct LLMConfig {
  int vocab = 0;  // filled from the tokenizer
  std::int64_t d_llm = 16;
  int layers = 2;
  int heads = 4;
  std::int64_t max_len = 96;
  std::int64_t ffn_mult = 2;
  void validate() const;
};

// Decoder-only toy LLM. The two sentinel rows of the logical vocabulary
// table are separate parameters so the training schedule can tune them while
// the table body stays frozen; ids 0 and 1 are the sentinels, the embedding
// table covers ids >= 2.
struct LLMParams {
  bool has_sentinels = false;
  Tensor sentinel_sg, sentinel_text;  // [1, d] each
  Tensor embed;                       // [vocab-2, d]
  Tensor pos;                         // [max_len, d] learned absolute positions
  std::vector<TransformerLayerParams> layers;
  Tensor lnf_g, lnf_b;
  Tensor head_w, head_b;  // [d, vocab], [vocab]
};

LLMParams make_llm_params(ParamStore& store, const LLMConfig& cfg, bool with_sentinels,
                          std::set<int> stages_body, std::set<int> stages_sentinel,
                          std::uint64_t master_seed);

// Embeds ordinary token ids (sentinels are placed structurally during
// assembly, never by id). Ids must lie in [2, vocab).
Tensor embed_tokens(const LLMParams& params, const std::vector<int>& ids, int vocab);

struct TokenSequence {
  Tensor embeddings;                    // [len, d], positions not yet added
  std::vector<int> targets;             // per position; -1 where untargeted
  std::vector<std::uint8_t> loss_mask;  // true only at answer positions
  std::int64_t n_v = 0, n_g = 0, n_t = 0;
  bool has_graph = false;
  std::int64_t sg_index = -1;    // -1 when the graph segment is omitted
  std::int64_t text_index = -1;  // position of the <text> sentinel
  std::int64_t text_start = 0;   // position of the first text token
  std::int64_t length() const { return embeddings.defined() ? embeddings.dim(0) : 0; }
};

// Assembles [visual, <sg>, graph, <text>, text]. graph == nullptr omits the
// sentinel-bracketed graph segment entirely (plain visual+text pipeline).
// answer_span indexes into the text segment and drives the loss mask.
TokenSequence assemble_sequence(const Tensor& visual, const Tensor* graph, const Tensor& text,
                                const LLMParams& params, const std::vector<int>& text_ids,
                                std::int64_t answer_start, std::int64_t answer_len);

// Adds positions, runs the causal decoder stack, returns [len, vocab] logits.
Tensor llm_forward(const TokenSequence& seq, const LLMParams& params, const LLMConfig& cfg);

// Mean next-token cross-entropy over the masked answer positions.
Tensor autoregressive_loss(const Tensor& logits, const TokenSequence& seq);

// W_v / W_g projections into the language embedding space.
struct ProjectionParams {
  Tensor wv_w, wv_b;
  bool has_graph = false;
  Tensor wg_w, wg_b;
};

ProjectionParams make_projection_params(ParamStore& store, std::int64_t d_e, std::int64_t d_g,
                                        std::int64_t d_llm, bool with_graph,
                                        std::set<int> stages_visual, std::set<int> stages_graph,
                                        std::uint64_t master_seed);

// [d_e,h,w] feature map -> [(h*w), d_llm] rows in row-major spatial order.
Tensor project_visual(const Tensor& fmap, const ProjectionParams& proj);

// Activated graphs only.
Tensor project_graph(const SceneGraph& g, const ProjectionParams& proj);

}  // namespace sge
