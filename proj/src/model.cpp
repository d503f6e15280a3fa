#include "sge/model.hpp"

#include <limits>
#include <stdexcept>

namespace sge {

void AblationFlags::validate() const {
  if ((mp || prompt) && !sg)
    throw std::invalid_argument("AblationFlags: mp/prompt require the graph pathway (sg)");
}

std::string AblationFlags::row_name() const {
  if (!sg) return "no-sg";
  if (mp && prompt) return "full";
  if (mp) return "sg+mp";
  if (prompt) return "sg+prompt";
  return "sg";
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), vocab_(cfg_.scene.category_count) {
  cfg_.flags.validate();
  cfg_.scene.validate();
  if (cfg_.enc.d_e != cfg_.sge.d_e)
    throw std::invalid_argument("Model: encoder and SGE disagree on d_e");
  if (cfg_.sge.d_t != cfg_.llm.d_llm)
    throw std::invalid_argument("Model: prompt features are token embeddings, so d_t must "
                                "equal d_llm");
  cfg_.llm.vocab = vocab_.size();
  cfg_.sge.validate();
  cfg_.llm.validate();

  const std::uint64_t seed = cfg_.init_seed;
  const bool sg = cfg_.flags.sg;
  proj_ = make_projection_params(store_, cfg_.enc.d_e, cfg_.sge.d_g, cfg_.llm.d_llm, sg,
                                 {1, 3}, {2, 3}, seed);
  if (sg) {
    SGEOptions opts;
    opts.message_passing = cfg_.flags.mp;
    opts.prompt_injection = cfg_.flags.prompt;
    sge_ = make_sge_params(store_, cfg_.sge, opts, {2, 3}, seed);
  }
  llm_ = make_llm_params(store_, cfg_.llm, sg, {3}, {2, 3}, seed);
}

ModelForward Model::forward(const SyntheticScene& scene, const QASample& qa, bool want_loss) {
  if (qa.prompt.empty() || qa.answer.empty())
    throw std::invalid_argument("Model::forward: sample needs prompt and answer tokens");
  Tensor fmap = render_feature_map(scene, cfg_.enc);
  Tensor visual = project_visual(fmap, proj_);

  std::vector<int> text_ids = qa.prompt;
  text_ids.insert(text_ids.end(), qa.answer.begin(), qa.answer.end());
  Tensor text = embed_tokens(llm_, text_ids, cfg_.llm.vocab);

  ModelForward out;
  Tensor graph_tokens;
  if (cfg_.flags.sg) {
    // the SGE prompt feature embeds only the question; answer tokens must
    // not reach the graph, which injects into every sequence position
    Tensor prompt_feat = embed_tokens(llm_, qa.prompt, cfg_.llm.vocab);
    SceneGraph g = sge_forward(fmap, scene.masks, scene.config.canvas_h, scene.config.canvas_w,
                               prompt_feat, sge_, cfg_.sge, &out.prompt_attn);
    graph_tokens = project_graph(g, proj_);
  }
  out.seq = assemble_sequence(visual, cfg_.flags.sg ? &graph_tokens : nullptr, text, llm_,
                              text_ids, static_cast<std::int64_t>(qa.prompt.size()),
                              static_cast<std::int64_t>(qa.answer.size()));
  out.logits = llm_forward(out.seq, llm_, cfg_.llm);
  if (want_loss) out.loss = autoregressive_loss(out.logits, out.seq);
  return out;
}

std::vector<int> Model::predict_answer(const SyntheticScene& scene, const QASample& qa,
                                       const std::vector<int>& candidates) {
  ModelForward fwd = forward(scene, qa, /*want_loss=*/false);
  const std::int64_t answer_pos0 =
      fwd.seq.text_start + static_cast<std::int64_t>(qa.prompt.size());
  std::vector<int> decoded;
  decoded.reserve(qa.answer.size());
  for (std::size_t k = 0; k < qa.answer.size(); ++k) {
    const std::int64_t row = answer_pos0 + static_cast<std::int64_t>(k) - 1;
    auto logits_row = fwd.logits.mat().row(row);
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    if (candidates.empty()) {
      for (int id = 0; id < cfg_.llm.vocab; ++id)
        if (logits_row(id) > best_score) {
          best_score = logits_row(id);
          best = id;
        }
    } else {
      for (int id : candidates) {
        if (id < 0 || id >= cfg_.llm.vocab)
          throw std::invalid_argument("predict_answer: candidate id out of range");
        if (logits_row(id) > best_score) {
          best_score = logits_row(id);
          best = id;
        }
      }
    }
    decoded.push_back(best);
  }
  return decoded;
}

void Model::apply_stage(int stage) {
  if (stage < 1 || stage > 3) throw std::invalid_argument("apply_stage: stage must be 1..3");
  for (Parameter* p : store_.all())
    p->tensor.set_requires_grad(p->trainable_in_stage.count(stage) > 0);
}

std::int64_t Model::scalar_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : store_.all()) n += p->tensor.size();
  return n;
}

std::int64_t Model::sge_scalar_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : store_.all())
    if (p->name.rfind("sge.", 0) == 0) n += p->tensor.size();
  return n;
}

}  // namespace sge
