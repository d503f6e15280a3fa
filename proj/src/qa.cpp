#include "sge/qa.hpp"

#include "sge/io_util.hpp"

#include <utility>

namespace sge {

namespace {

std::vector<int> relation_prompt(const SyntheticScene& scene, const Vocab& vocab, int s,
                                 int o) {
  const int cat_s = scene.entities[static_cast<std::size_t>(s)].category_id;
  const int cat_o = scene.entities[static_cast<std::size_t>(o)].category_id;
  return {Vocab::kRel,        vocab.entity_ref(s), vocab.category(cat_s),
          vocab.entity_ref(o), vocab.category(cat_o), Vocab::kQMark};
}

}  // namespace

std::vector<QASample> make_relation_qa(const SyntheticScene& scene, const Vocab& vocab) {
  std::vector<QASample> out;
  const int n = scene.n();
  std::vector<std::uint8_t> related(static_cast<std::size_t>(n * n), 0);
  for (const Relation& r : scene.relations) {
    related[static_cast<std::size_t>(r.subject * n + r.object)] = 1;
    QASample s;
    s.task = Task::relation;
    s.prompt = relation_prompt(scene, vocab, r.subject, r.object);
    s.answer = {vocab.predicate(r.predicate)};
    s.subject = r.subject;
    s.object = r.object;
    s.predicate_label = r.predicate;
    out.push_back(std::move(s));
  }

  std::vector<std::pair<int, int>> unrelated;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && !related[static_cast<std::size_t>(i * n + j)]) unrelated.emplace_back(i, j);
    }
  }
  Rng rng(mix_seed(scene.seed, fnv1a64("qa-distractors")));
  for (std::size_t i = unrelated.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(unrelated[i - 1], unrelated[j]);
  }
  const std::size_t n_neg = std::min(scene.relations.size(), unrelated.size());
  for (std::size_t k = 0; k < n_neg; ++k) {
    QASample s;
    s.task = Task::relation;
    s.prompt = relation_prompt(scene, vocab, unrelated[k].first, unrelated[k].second);
    s.answer = {vocab.none()};
    s.subject = unrelated[k].first;
    s.object = unrelated[k].second;
    s.predicate_label = -1;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<QASample> make_counting_qa(const SyntheticScene& scene, const Vocab& vocab) {
  std::vector<QASample> out;
  const auto counts = category_counts(scene);
  std::vector<int> absent;
  for (int c = 0; c < scene.config.category_count; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      absent.push_back(c);
      continue;
    }
    QASample s;
    s.task = Task::counting;
    s.prompt = {Vocab::kCount, vocab.category(c), Vocab::kQMark};
    s.answer = {vocab.digit(counts[static_cast<std::size_t>(c)])};
    s.category = c;
    s.expected_count = counts[static_cast<std::size_t>(c)];
    out.push_back(std::move(s));
  }
  if (!absent.empty()) {
    Rng rng(mix_seed(scene.seed, fnv1a64("qa-zero-count")));
    const int c = absent[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(absent.size()) - 1))];
    QASample s;
    s.task = Task::counting;
    s.prompt = {Vocab::kCount, vocab.category(c), Vocab::kQMark};
    s.answer = {vocab.digit(0)};
    s.category = c;
    s.expected_count = 0;
    out.push_back(std::move(s));
  }
  return out;
}

QASample make_caption_qa(const SyntheticScene& scene, const Vocab& vocab) {
  QASample s;
  s.task = Task::caption;
  s.prompt = {Vocab::kCap, Vocab::kQMark};
  for (const Entity& e : scene.entities) s.answer.push_back(vocab.category(e.category_id));
  return s;
}

std::vector<QASample> make_all_qa(const SyntheticScene& scene, const Vocab& vocab) {
  std::vector<QASample> out = make_relation_qa(scene, vocab);
  auto counting = make_counting_qa(scene, vocab);
  out.insert(out.end(), counting.begin(), counting.end());
  out.push_back(make_caption_qa(scene, vocab));
  return out;
}

}  // namespace sge
