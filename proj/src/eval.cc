#include "gf/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gf/common.h"

namespace gf {

std::vector<Span> eval_spans(const ParseTree& tree) { return tree.nontrivial_spans(); }

std::vector<Span> eval_spans(const GoldTree& tree) {
  std::vector<Span> out;
  out.reserve(tree.spans.size());
  for (const LabeledSpan& s : tree.spans)
    if (!(s.span.i == 0 && s.span.j == tree.n - 1)) out.push_back(s.span);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

int64_t overlap(const std::vector<Span>& a, const std::vector<Span>& b) {
  int64_t tp = 0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++tp;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return tp;
}

double f1_from_counts(int64_t tp, int64_t pred, int64_t gold) {
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(pred);
  const double r = static_cast<double>(tp) / static_cast<double>(gold);
  return 2.0 * p * r / (p + r);
}

}  // namespace

double sentence_f1(const std::vector<Span>& a, const std::vector<Span>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  return f1_from_counts(overlap(a, b), static_cast<int64_t>(a.size()),
                        static_cast<int64_t>(b.size()));
}

F1Result f1_scores(const std::vector<ParseTree>& predicted,
                   const std::vector<GoldTree>& gold) {
  check_input(predicted.size() == gold.size(), "f1: ", predicted.size(),
              " predictions for ", gold.size(), " gold trees");
  F1Result res;
  double s_sum = 0.0;
  for (size_t s = 0; s < gold.size(); ++s) {
    check_input(predicted[s].n == gold[s].n, "f1: sentence ", s, " has ", predicted[s].n,
                " predicted tokens but ", gold[s].n, " gold tokens");
    const std::vector<Span> g = eval_spans(gold[s]);
    if (g.empty()) continue;
    const std::vector<Span> p = eval_spans(predicted[s]);
    const int64_t tp = overlap(p, g);
    res.tp += tp;
    res.predicted += static_cast<int64_t>(p.size());
    res.gold += static_cast<int64_t>(g.size());
    s_sum += p.empty() ? 0.0
                       : f1_from_counts(tp, static_cast<int64_t>(p.size()),
                                        static_cast<int64_t>(g.size()));
    res.scored_sentences += 1;
  }
  if (res.scored_sentences > 0) {
    res.s_f1 = 100.0 * s_sum / res.scored_sentences;
    res.c_f1 = 100.0 * f1_from_counts(res.tp, res.predicted, res.gold);
  }
  return res;
}

std::optional<double> label_recall(const std::vector<ParseTree>& predicted,
                                   const std::vector<GoldTree>& gold,
                                   const std::string& label) {
  check_input(predicted.size() == gold.size(), "label_recall: tree list size mismatch");
  int64_t total = 0, hit = 0;
  for (size_t s = 0; s < gold.size(); ++s) {
    const GoldTree& g = gold[s];
    for (const LabeledSpan& ls : g.spans) {
      if (ls.label != label) continue;
      if (ls.span.i == 0 && ls.span.j == g.n - 1) continue;
      ++total;
      if (predicted[s].contains(ls.span)) ++hit;
    }
  }
  if (total == 0) return std::nullopt;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<std::string> gold_labels_by_frequency(const std::vector<GoldTree>& gold) {
  std::map<std::string, int64_t> counts;
  for (const GoldTree& g : gold)
    for (const LabeledSpan& ls : g.spans)
      if (!(ls.span.i == 0 && ls.span.j == g.n - 1)) ++counts[ls.label];
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const auto& [label, count] : ranked) out.push_back(label);
  return out;
}

double LengthBucket::recall_percent() const {
  return gold_total == 0
             ? 0.0
             : 100.0 * static_cast<double>(recovered) / static_cast<double>(gold_total);
}

std::vector<LengthBucket> recall_by_length(const std::vector<ParseTree>& predicted,
                                           const std::vector<GoldTree>& gold) {
  check_input(predicted.size() == gold.size(), "recall_by_length: tree list size mismatch");
  std::map<int, LengthBucket> buckets;
  for (size_t s = 0; s < gold.size(); ++s) {
    for (const LabeledSpan& ls : gold[s].spans) {
      if (ls.span.i == 0 && ls.span.j == gold[s].n - 1) continue;
      LengthBucket& b = buckets[ls.span.width()];
      b.width = ls.span.width();
      b.gold_total += 1;
      if (predicted[s].contains(ls.span)) b.recovered += 1;
    }
  }
  std::vector<LengthBucket> out;
  out.reserve(buckets.size());
  for (const auto& [width, bucket] : buckets) out.push_back(bucket);
  return out;
}

std::map<int, std::map<std::string, int64_t>> label_distribution(
    const std::vector<GoldTree>& gold) {
  std::map<int, std::map<std::string, int64_t>> dist;
  for (const GoldTree& g : gold)
    for (const LabeledSpan& ls : g.spans)
      if (!(ls.span.i == 0 && ls.span.j == g.n - 1)) ++dist[ls.span.width()][ls.label];
  return dist;
}

ParseTree left_branching(int n) {
  check(n >= 2, "left_branching: need at least 2 tokens");
  ParseTree t;
  t.n = n;
  for (int j = 1; j < n; ++j) t.spans.push_back({0, j});
  t.sort_spans();
  return t;
}

ParseTree right_branching(int n) {
  check(n >= 2, "right_branching: need at least 2 tokens");
  ParseTree t;
  t.n = n;
  for (int i = n - 2; i >= 0; --i) t.spans.push_back({i, n - 1});
  t.sort_spans();
  return t;
}

namespace {

// catalan_trees[w] = number of binary bracketings of w tokens (Catalan(w-1)).
std::vector<double> catalan_table(int n) {
  std::vector<double> t(static_cast<size_t>(n) + 1, 0.0);
  t[1] = 1.0;
  for (int w = 2; w <= n; ++w)
    for (int l = 1; l < w; ++l) t[static_cast<size_t>(w)] += t[l] * t[w - l];
  return t;
}

void random_split(int i, int j, const std::vector<double>& cat, Rng& rng, ParseTree* t) {
  if (i == j) return;
  t->spans.push_back({i, j});
  const int w = j - i + 1;
  // Left width l chosen with probability T(l)T(w-l)/T(w) makes every full
  // bracketing equally likely.
  double draw = rng.uniform() * cat[static_cast<size_t>(w)];
  int l = 1;
  for (; l < w - 1; ++l) {
    draw -= cat[static_cast<size_t>(l)] * cat[static_cast<size_t>(w - l)];
    if (draw <= 0.0) break;
  }
  random_split(i, i + l - 1, cat, rng, t);
  random_split(i + l, j, cat, rng, t);
}

}  // namespace

ParseTree random_tree(int n, Rng& rng) {
  check(n >= 2, "random_tree: need at least 2 tokens");
  ParseTree t;
  t.n = n;
  const std::vector<double> cat = catalan_table(n);
  random_split(0, n - 1, cat, rng, &t);
  t.sort_spans();
  return t;
}

ConsistencyMatrix consistency(
    const std::vector<std::string>& names,
    const std::vector<std::vector<std::vector<std::vector<Span>>>>& runs) {
  check_input(names.size() == runs.size(), "consistency: ", names.size(), " names for ",
              runs.size(), " models");
  const size_t m = names.size();
  ConsistencyMatrix out;
  out.names = names;
  out.grid.assign(m, std::vector<double>(m, -1.0));

  auto pair_s_f1 = [](const std::vector<std::vector<Span>>& a,
                      const std::vector<std::vector<Span>>& b) {
    check_input(a.size() == b.size(), "consistency: runs parse different corpus sizes");
    double sum = 0.0;
    int counted = 0;
    for (size_t s = 0; s < a.size(); ++s) {
      if (a[s].empty() && b[s].empty()) continue;  // no bracketing decisions
      sum += sentence_f1(a[s], b[s]);
      ++counted;
    }
    return counted == 0 ? 1.0 : sum / counted;
  };

  for (size_t x = 0; x < m; ++x) {
    for (size_t y = 0; y < m; ++y) {
      double sum = 0.0;
      int pairs = 0;
      for (size_t rx = 0; rx < runs[x].size(); ++rx) {
        for (size_t ry = 0; ry < runs[y].size(); ++ry) {
          if (x == y && rx == ry) continue;
          sum += pair_s_f1(runs[x][rx], runs[y][ry]);
          ++pairs;
        }
      }
      if (pairs > 0) out.grid[x][y] = 100.0 * sum / pairs;
    }
  }
  return out;
}

std::string ConsistencyMatrix::csv() const {
  std::ostringstream out;
  out << "model";
  for (const std::string& n : names) out << "," << n;
  out << "\n";
  for (size_t x = 0; x < names.size(); ++x) {
    out << names[x];
    for (size_t y = 0; y < names.size(); ++y) {
      out << ",";
      if (grid[x][y] >= 0.0) out << format_percent(grid[x][y]);
    }
    out << "\n";
  }
  return out.str();
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", percent);
  return buf;
}

nlohmann::json evaluation_report(const std::vector<ParseTree>& predicted,
                                 const std::vector<GoldTree>& gold, int top_labels) {
  const F1Result f1 = f1_scores(predicted, gold);
  nlohmann::json report;
  report["c_f1"] = f1.c_f1;
  report["s_f1"] = f1.s_f1;
  report["scored_sentences"] = f1.scored_sentences;

  nlohmann::json recalls = nlohmann::json::object();
  const std::vector<std::string> labels = gold_labels_by_frequency(gold);
  for (size_t i = 0; i < labels.size() && i < static_cast<size_t>(top_labels); ++i) {
    const std::optional<double> r = label_recall(predicted, gold, labels[i]);
    recalls[labels[i]] = r ? nlohmann::json(*r) : nlohmann::json("-");
  }
  report["label_recall"] = recalls;

  nlohmann::json by_len = nlohmann::json::object();
  for (const LengthBucket& b : recall_by_length(predicted, gold))
    by_len[std::to_string(b.width)] = {{"gold", b.gold_total},
                                       {"recovered", b.recovered},
                                       {"recall", b.recall_percent()}};
  report["recall_by_length"] = by_len;

  nlohmann::json dist = nlohmann::json::object();
  for (const auto& [width, labels_at] : label_distribution(gold)) {
    nlohmann::json row = nlohmann::json::object();
    for (const auto& [label, count] : labels_at) row[label] = count;
    dist[std::to_string(width)] = row;
  }
  report["label_distribution"] = dist;
  return report;
}

}  // namespace gf
