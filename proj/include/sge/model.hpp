#pragma once

#include "sge/encoder.hpp"
#include "sge/llm.hpp"
#include "sge/qa.hpp"
#include "sge/scene.hpp"
#include "sge/sge_module.hpp"
#include "sge/tensor.hpp"
#include "sge/vocab.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sge {

// Structural switches. sg gates the graph pathway as a whole (no graph
// tokens, sentinels, SGE or W_g parameters when false); mp and prompt bypass
// their SGE stages. sge_d / sge_t pick the training recipe: whether relation
// data is used at all and whether it gets its own schedule stage.
struct AblationFlags {
  bool sg = true;
  bool mp = true;
  bool prompt = true;
  bool sge_d = true;
  bool sge_t = true;
  void validate() const;  // mp or prompt requires sg
  std::string row_name() const;
};

struct ModelConfig {
  SceneConfig scene;
  EncoderConfig enc;
  SGEConfig sge;
  LLMConfig llm;  // vocab is derived from the scene's category count
  AblationFlags flags;
  std::uint64_t init_seed = 1;
};

struct ModelForward {
  Tensor loss;  // scalar; undefined when want_loss=false
  Tensor logits;
  TokenSequence seq;
  PromptAttention prompt_attn;  // populated when the prompt path ran
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  ModelForward forward(const SyntheticScene& scene, const QASample& qa,
                       bool want_loss = true);

  // Teacher-forced greedy decode of the answer positions, restricted to
  // `candidates` (empty = whole vocabulary). Ties go to the lower id.
  std::vector<int> predict_answer(const SyntheticScene& scene, const QASample& qa,
                                  const std::vector<int>& candidates);

  // Freeze contract: requires_grad exactly on the stage's trainable set.
  void apply_stage(int stage);

  std::int64_t scalar_count() const;
  std::int64_t sge_scalar_count() const;  // parameters named sge.*

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore store_;
  ProjectionParams proj_;
  SGEParams sge_;
  LLMParams llm_;
};

}  // namespace sge
