#pragma once

#include "sge/scene.hpp"
#include "sge/vocab.hpp"

#include <vector>

namespace sge {

enum class Task : int { relation = 0, counting = 1, caption = 2 };

// One question/answer pair over a scene. The text segment fed to the model is
// prompt followed by answer; the loss mask covers exactly the answer suffix.
struct QASample {
  Task task = Task::relation;
  std::vector<int> prompt;
  std::vector<int> answer;
  // relation provenance: predicate_label is the geometric predicate id, or -1
  // for distractor pairs whose answer is "none"
  int subject = -1;
  int object = -1;
  int predicate_label = -1;
  // counting provenance
  int category = -1;
  int expected_count = -1;
};

// One sample per ground-truth triple, plus deterministic "none" distractor
// pairs at up to a 1:1 ratio.
std::vector<QASample> make_relation_qa(const SyntheticScene& scene, const Vocab& vocab);

// One sample per present category plus one absent category (answer "0") when
// any category is absent.
std::vector<QASample> make_counting_qa(const SyntheticScene& scene, const Vocab& vocab);

// Answer lists entity categories in entity order.
QASample make_caption_qa(const SyntheticScene& scene, const Vocab& vocab);

std::vector<QASample> make_all_qa(const SyntheticScene& scene, const Vocab& vocab);

}  // namespace sge
