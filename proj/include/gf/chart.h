#pragma once

// Log-space chart algorithms for binary grammars: inside, outside, span
// marginals, Viterbi decoding, expected rule counts, exhaustive tree
// enumeration, and a fused Graph operation exposing log-likelihood and
// span-label marginals with exact gradients.
//
// Grammar shape: a start symbol expands to one of N nonterminals; a
// nonterminal expands to an ordered pair over the N + P nonterminal and
// preterminal symbols; a preterminal emits one vocabulary item.  Sentences
// therefore need at least two tokens.
//
// All chart arithmetic is float64.  Log-zero is the sentinel -1e30; values
// at or below -1e29 are treated as impossible.

#include <memory>
#include <vector>

#include "gf/graph.h"
#include "gf/tree.h"

namespace gf {

constexpr double kLogZero = -1e30;
constexpr double kLogZeroThreshold = -1e29;
inline bool log_is_zero(double x) { return x <= kLogZeroThreshold; }

struct GrammarSizes {
  int nonterminals = 0;  // N, symbol ids [0, N)
  int preterminals = 0;  // P, symbol ids [N, N+P)
  int vocab = 0;
  int symbols() const { return nonterminals + preterminals; }
  int pairs() const { return symbols() * symbols(); }
  void validate() const;
};

// Log-probability tables.  binary is [N, S*S] with pair index b*S + c.
struct RuleTensors {
  GrammarSizes sizes;
  std::vector<double> root;     // [N]
  std::vector<double> binary;   // [N, S*S]
  std::vector<double> lexical;  // [P, vocab]

  static RuleTensors zeros(GrammarSizes s);
  double binary_at(int a, int b, int c) const {
    return binary[static_cast<size_t>(a) * sizes.pairs() +
                  static_cast<size_t>(b) * sizes.symbols() + c];
  }
  // Largest deviation of any row's probability mass from 1.
  double max_normalization_error() const;
};

// Inside chart.  Every cell (i,j) stores a dense vector over all S symbols;
// entries that cannot occur there (preterminals on wide spans, nonterminals
// on single tokens) stay at kLogZero.
struct InsideChart {
  int n = 0;
  GrammarSizes sizes;
  double logp = kLogZero;
  std::vector<double> full;  // [(i*n + j), S]

  const double* cell(int i, int j) const {
    return &full[(static_cast<size_t>(i) * n + j) * sizes.symbols()];
  }
  double* cell_mut(int i, int j) {
    return &full[(static_cast<size_t>(i) * n + j) * sizes.symbols()];
  }
};

// Canonical enumeration of width >= 2 spans: (0,1), (0,2), ..., (0,n-1),
// (1,2), ...  Marginal vectors and the Graph op outputs follow this order.
int span_cell_count(int n);
int span_cell_index(int n, int i, int j);
std::vector<Span> span_cells(int n);

// Runs the inside pass; returns log p(sentence).  Unparseable sentences
// yield kLogZero (not an error; callers decide).
double inside(const RuleTensors& g, const std::vector<int>& words, InsideChart* chart);

// Outside scores, same layout as InsideChart::full.
std::vector<double> outside(const RuleTensors& g, const std::vector<int>& words,
                            const InsideChart& chart);

// Per-span-per-label posterior, [span_cell_count(n), N], computed from the
// inside and outside tables.
std::vector<double> span_label_marginals(const RuleTensors& g,
                                         const std::vector<int>& words);

// Same quantity via the adjoint sweep through the recorded inside recursion
// (linear-space backpropagation); validation path for the outside method.
std::vector<double> span_label_marginals_backprop(const RuleTensors& g,
                                                  const std::vector<int>& words);

// Per-span posterior summed over labels, [span_cell_count(n)].
std::vector<double> span_marginals(const RuleTensors& g, const std::vector<int>& words);

struct RuleGrads {
  std::vector<double> root, binary, lexical;  // same shapes as RuleTensors
};

// Expected rule counts under the posterior over trees, via inside + outside.
RuleGrads expected_counts(const RuleTensors& g, const std::vector<int>& words);

// Unified exact backward for the chart: returns
//   glogp * d(log p)/d(rules) + d(sum_{span,label} gmarg * marginal)/d(rules).
// gmarg may be null (counts-only).  The second term is computed with a
// tangent-carrying inside pass followed by a reverse sweep, so gradients of
// marginal-weighted losses flow into the grammar exactly.
// If cell_adjoints is non-null it receives d(output)/d(inside cell value)
// for every width >= 2 cell ([span_cell_count(n), N]); with glogp = 1 and no
// gmarg these adjoints are the span-label marginals.
RuleGrads chart_backward(const RuleTensors& g, const std::vector<int>& words,
                         const InsideChart& chart, double glogp,
                         const double* gmarg,
                         std::vector<double>* cell_adjoints = nullptr);

// CYK decode under fixed rule scores.  Ties prefer the smaller left-child
// width, then the lower left / right / root category index.  Throws if the
// sentence has no parse.
ParseTree viterbi_parse(const RuleTensors& g, const std::vector<int>& words);

// All binary bracketings of n tokens (Catalan(n-1) of them); n <= 12.
std::vector<std::vector<Span>> enumerate_trees(int n);

// Fused Graph operation.  root [1,N], binary [N,S*S], lexical [P,V] must be
// log-probability nodes.  Returns the scalar log-likelihood node and, when
// want_marginals is set, the [span_cell_count(n), N] label-marginal node.
struct ChartOutputs {
  Var logp;
  Var label_marginals;  // invalid unless requested
};
ChartOutputs chart_op(Graph& g, Var root, Var binary, Var lexical, GrammarSizes sizes,
                      const std::vector<int>& words, bool want_marginals);

}  // namespace gf
