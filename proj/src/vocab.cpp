#include "sge/vocab.hpp"

#include "sge/scene.hpp"

#include <stdexcept>

namespace sge {

namespace {

const char* category_name(int c) {
  static const char* names[] = {"cube", "ball", "cone", "ring",
                                "slab", "tube", "disk", "peg"};
  return names[c];
}

}  // namespace

Vocab::Vocab(int category_count) : category_count_(category_count) {
  if (category_count < 1 || category_count > 8) {
    throw std::invalid_argument("vocab: category_count must be in [1, 8]");
  }
  tokens_ = {"<sg>", "<text>", "rel", "count", "cap", "?"};
  first_entity_ = size();
  for (int i = 0; i < kMaxEntities; ++i) tokens_.push_back("e" + std::to_string(i));
  first_category_ = size();
  for (int c = 0; c < category_count; ++c) tokens_.push_back(category_name(c));
  first_predicate_ = size();
  for (int p = 0; p < kPredicateCount; ++p) tokens_.push_back(predicate_name(p));
  none_ = size();
  tokens_.push_back("none");
  first_digit_ = size();
  for (int d = 0; d < 10; ++d) tokens_.push_back(std::to_string(d));
}

int Vocab::entity_ref(int i) const {
  if (i < 0 || i >= kMaxEntities) {
    throw std::invalid_argument("vocab: entity reference out of range: " + std::to_string(i));
  }
  return first_entity_ + i;
}

int Vocab::category(int c) const {
  if (c < 0 || c >= category_count_) {
    throw std::invalid_argument("vocab: category out of range: " + std::to_string(c));
  }
  return first_category_ + c;
}

int Vocab::predicate(int p) const {
  if (p < 0 || p >= kPredicateCount) {
    throw std::invalid_argument("vocab: predicate out of range: " + std::to_string(p));
  }
  return first_predicate_ + p;
}

int Vocab::none() const { return none_; }

int Vocab::digit(int d) const {
  if (d < 0 || d >= 10) {
    throw std::invalid_argument("vocab: digit out of range: " + std::to_string(d));
  }
  return first_digit_ + d;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::invalid_argument("vocab: token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id_of(const std::string& token) const {
  for (int i = 0; i < size(); ++i) {
    if (tokens_[static_cast<std::size_t>(i)] == token) return i;
  }
  return -1;
}

std::vector<int> Vocab::relation_answer_tokens() const {
  std::vector<int> out;
  for (int p = 0; p < kPredicateCount; ++p) out.push_back(predicate(p));
  out.push_back(none());
  return out;
}

std::vector<int> Vocab::digit_answer_tokens(int max_count) const {
  std::vector<int> out;
  for (int d = 0; d <= max_count && d < 10; ++d) out.push_back(digit(d));
  return out;
}

}  // namespace sge
