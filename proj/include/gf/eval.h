#pragma once

// Measurement suite: unlabeled corpus-level and sentence-level F1 over
// nontrivial spans (width >= 2, whole-sentence span excluded), per-label
// recall, recall and label distributions by constituent width, branching
// baselines, a uniform random-tree baseline, and the cross-run consistency
// matrix.
//
// Sentences whose gold nontrivial span set is empty are excluded from both
// averages — they carry no measurable bracketing decisions.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gf/dataio.h"
#include "gf/rng.h"
#include "gf/tree.h"

namespace gf {

// Nontrivial unlabeled spans, sorted.
std::vector<Span> eval_spans(const ParseTree& tree);
std::vector<Span> eval_spans(const GoldTree& tree);

// Unlabeled F1 between two sorted span sets, in [0, 1]; 0 when nothing
// overlaps, 1 when both are empty.
double sentence_f1(const std::vector<Span>& a, const std::vector<Span>& b);

struct F1Result {
  double c_f1 = 0.0;  // percent
  double s_f1 = 0.0;  // percent
  int64_t tp = 0, predicted = 0, gold = 0;
  int scored_sentences = 0;
};

F1Result f1_scores(const std::vector<ParseTree>& predicted,
                   const std::vector<GoldTree>& gold);

// Fraction (percent) of gold spans with `label` recovered as unlabeled spans;
// nullopt when the label never occurs.
std::optional<double> label_recall(const std::vector<ParseTree>& predicted,
                                   const std::vector<GoldTree>& gold,
                                   const std::string& label);

// Gold labels by frequency (desc, ties lexicographic).
std::vector<std::string> gold_labels_by_frequency(const std::vector<GoldTree>& gold);

struct LengthBucket {
  int width = 0;
  int64_t gold_total = 0;
  int64_t recovered = 0;
  double recall_percent() const;
};
std::vector<LengthBucket> recall_by_length(const std::vector<ParseTree>& predicted,
                                           const std::vector<GoldTree>& gold);

// width -> label -> gold count
std::map<int, std::map<std::string, int64_t>> label_distribution(
    const std::vector<GoldTree>& gold);

// ---- baselines ----

ParseTree left_branching(int n);
ParseTree right_branching(int n);
// Uniformly distributed over all binary bracketings of n tokens.
ParseTree random_tree(int n, Rng& rng);

// ---- consistency ----

struct ConsistencyMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> grid;     // percent; -1 marks undefined
  std::string csv() const;
};

// runs[model][run][sentence] = nontrivial span set of that parse.
ConsistencyMatrix consistency(
    const std::vector<std::string>& names,
    const std::vector<std::vector<std::vector<std::vector<Span>>>>& runs);

// ---- reporting ----

std::string format_percent(double percent);  // one decimal, "-" for nullopt via overload

nlohmann::json evaluation_report(const std::vector<ParseTree>& predicted,
                                 const std::vector<GoldTree>& gold, int top_labels = 3);

}  // namespace gf
