#pragma once

#include <string>
#include <vector>

namespace sge {

// Closed token vocabulary shared by the prompt encoder and the toy language
// model. Layout (ids ascend in this order): sentinels, task markers, "?",
// entity references e0..e8, category names, predicate names, "none", digits.
class Vocab {
 public:
  static constexpr int kSg = 0;
  static constexpr int kText = 1;
  static constexpr int kRel = 2;
  static constexpr int kCount = 3;
  static constexpr int kCap = 4;
  static constexpr int kQMark = 5;
  static constexpr int kMaxEntities = 9;

  explicit Vocab(int category_count);

  int size() const { return static_cast<int>(tokens_.size()); }
  int category_count() const { return category_count_; }

  int entity_ref(int i) const;   // i in [0, 9)
  int category(int c) const;
  int predicate(int p) const;    // geometric predicate id
  int none() const;
  int digit(int d) const;        // d in [0, 10)

  const std::string& token(int id) const;
  int id_of(const std::string& token) const;  // -1 when absent

  // the 7 legal relation answers: 6 predicates then "none"
  std::vector<int> relation_answer_tokens() const;
  std::vector<int> digit_answer_tokens(int max_count) const;

 private:
  int category_count_;
  int first_entity_, first_category_, first_predicate_, none_, first_digit_;
  std::vector<std::string> tokens_;
};

}  // namespace sge
