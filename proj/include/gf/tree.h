#pragma once

// Unlabeled binary constituency structure over a token sequence, stored as
// the set of its width >= 2 spans (inclusive 0-based endpoints).

#include <string>
#include <vector>

namespace gf {

struct Span {
  int i = 0;
  int j = 0;
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
  int width() const { return j - i + 1; }
};

struct ParseTree {
  int n = 0;                // token count
  std::vector<Span> spans;  // sorted; a full binary tree has n-1 of them

  bool contains(Span s) const;
  void sort_spans();

  // Spans that count for evaluation: width >= 2 and not the whole sentence.
  std::vector<Span> nontrivial_spans() const;

  // True iff spans form a complete binary bracketing of n tokens.
  bool is_binary_tree() const;

  // "(X (X w1 w2) w3)" rendering; requires a valid binary tree.
  std::string bracket_string(const std::vector<std::string>& tokens) const;
};

}  // namespace gf
