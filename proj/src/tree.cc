#include "gf/tree.h"

#include <algorithm>
#include <set>

#include "gf/common.h"

namespace gf {

bool ParseTree::contains(Span s) const {
  return std::binary_search(spans.begin(), spans.end(), s);
}

void ParseTree::sort_spans() {
  std::sort(spans.begin(), spans.end());
  spans.erase(std::unique(spans.begin(), spans.end()), spans.end());
}

std::vector<Span> ParseTree::nontrivial_spans() const {
  std::vector<Span> out;
  for (const Span& s : spans)
    if (s.width() >= 2 && !(s.i == 0 && s.j == n - 1)) out.push_back(s);
  return out;
}

namespace {

// Returns the split point of (i,j) given the span set, or -1.
int find_split(const std::set<std::pair<int, int>>& set, int i, int j) {
  for (int k = i; k < j; ++k) {
    const bool left_ok = (k == i) || set.count({i, k});
    const bool right_ok = (k + 1 == j) || set.count({k + 1, j});
    if (left_ok && right_ok) return k;
  }
  return -1;
}

bool check_node(const std::set<std::pair<int, int>>& set, int i, int j) {
  if (i == j) return true;
  if (!set.count({i, j})) return false;
  const int k = find_split(set, i, j);
  if (k < 0) return false;
  return check_node(set, i, k) && check_node(set, k + 1, j);
}

void render(const std::set<std::pair<int, int>>& set, int i, int j,
            const std::vector<std::string>& tokens, std::string& out) {
  if (i == j) {
    out += tokens[static_cast<size_t>(i)];
    return;
  }
  const int k = find_split(set, i, j);
  check(k >= 0, "bracket_string: span (", i, ",", j, ") has no valid split");
  out += "(X ";
  render(set, i, k, tokens, out);
  out += ' ';
  render(set, k + 1, j, tokens, out);
  out += ')';
}

}  // namespace

bool ParseTree::is_binary_tree() const {
  if (n < 2) return false;
  if (static_cast<int>(spans.size()) != n - 1) return false;
  std::set<std::pair<int, int>> set;
  for (const Span& s : spans) {
    if (s.i < 0 || s.j >= n || s.width() < 2) return false;
    set.insert({s.i, s.j});
  }
  if (set.size() != spans.size()) return false;
  if (!set.count({0, n - 1})) return false;
  return check_node(set, 0, n - 1);
}

std::string ParseTree::bracket_string(const std::vector<std::string>& tokens) const {
  check(static_cast<int>(tokens.size()) == n, "bracket_string: token count mismatch");
  check(is_binary_tree(), "bracket_string: spans are not a binary tree over ", n,
        " tokens");
  std::set<std::pair<int, int>> set;
  for (const Span& s : spans) set.insert({s.i, s.j});
  std::string out;
  render(set, 0, n - 1, tokens, out);
  return out;
}

}  // namespace gf
