// Chart kernels against closed forms for uniform grammars, brute-force
// enumeration, finite differences in log-rule space, and the two
// independent marginal computations against each other.

#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gf/chart.h"
#include "gf/oracles.h"
#include "gf/rng.h"

using namespace gf;

namespace {

// Uniform grammar: one nonterminal, one preterminal, uniform rows.  Every
// bracketing of n tokens has probability (1/4)^(n-1) * (1/2)^n, so
// p(sentence) = Catalan(n-1) * (1/4)^(n-1) * (1/2)^n for any 2-word string.
RuleTensors uniform_grammar() {
  RuleTensors g = RuleTensors::zeros({1, 1, 2});
  g.root = {0.0};
  for (auto& x : g.binary) x = std::log(0.25);
  g.lexical = {std::log(0.5), std::log(0.5)};
  return g;
}

RuleTensors random_grammar(GrammarSizes sizes, uint64_t seed) {
  Rng rng(seed);
  RuleTensors g = RuleTensors::zeros(sizes);
  auto fill = [&](std::vector<double>& row, size_t begin, size_t count) {
    double mx = -1e300;
    for (size_t i = 0; i < count; ++i) {
      row[begin + i] = rng.normal();
      mx = std::max(mx, row[begin + i]);
    }
    double total = 0.0;
    for (size_t i = 0; i < count; ++i) total += std::exp(row[begin + i] - mx);
    const double lse = mx + std::log(total);
    for (size_t i = 0; i < count; ++i) row[begin + i] -= lse;
  };
  fill(g.root, 0, g.root.size());
  for (int a = 0; a < sizes.nonterminals; ++a)
    fill(g.binary, static_cast<size_t>(a) * sizes.pairs(), static_cast<size_t>(sizes.pairs()));
  for (int t = 0; t < sizes.preterminals; ++t)
    fill(g.lexical, static_cast<size_t>(t) * sizes.vocab, static_cast<size_t>(sizes.vocab));
  return g;
}

double catalan(int n) {
  double c = 1.0;
  for (int i = 0; i < n; ++i) c = c * 2 * (2 * i + 1) / (i + 2);
  return c;
}

}  // namespace

TEST_CASE("inside matches the uniform-grammar closed form") {
  const RuleTensors g = uniform_grammar();
  for (int n = 2; n <= 8; ++n) {
    std::vector<int> words;
    for (int i = 0; i < n; ++i) words.push_back(i % 2);
    InsideChart chart;
    const double logp = inside(g, words, &chart);
    const double expect =
        std::log(catalan(n - 1)) + (n - 1) * std::log(0.25) + n * std::log(0.5);
    INFO("n = ", n);
    CHECK(std::abs(logp - expect) < 1e-12);
    CHECK(chart.logp == logp);
  }
}

TEST_CASE("unparseable sentences yield log-zero, not an error") {
  RuleTensors g = uniform_grammar();
  // Only NT->NT NT remains possible: leaves can never combine.
  for (auto& x : g.binary) x = kLogZero;
  g.binary[0] = 0.0;
  InsideChart chart;
  CHECK(log_is_zero(inside(g, {0, 1}, &chart)));
  CHECK_THROWS_WITH_AS(viterbi_parse(g, {0, 1}),
                       "viterbi: sentence has no parse under this grammar",
                       std::runtime_error);
}

TEST_CASE("viterbi breaks exact ties toward the smaller left child") {
  const RuleTensors g = uniform_grammar();
  ParseTree t = viterbi_parse(g, {0, 1, 0});
  REQUIRE(t.spans.size() == 2);
  CHECK(t.spans[0] == Span{0, 2});
  CHECK(t.spans[1] == Span{1, 2});  // right-branching, split after token 0
  CHECK(t.is_binary_tree());
}

TEST_CASE("viterbi recovers the dominant bracketing") {
  // Make NT -> PT NT overwhelmingly likely so left splits lose.
  RuleTensors g = uniform_grammar();
  g.binary = {std::log(0.01), std::log(0.01), std::log(0.96), std::log(0.02)};
  ParseTree t = viterbi_parse(g, {0, 0, 1, 1});
  REQUIRE(t.n == 4);
  CHECK(t.contains(Span{1, 3}));
  CHECK(t.contains(Span{2, 3}));
}

TEST_CASE("span cell order is the canonical row-major enumeration") {
  for (int n = 2; n <= 7; ++n) {
    CHECK(span_cell_count(n) == n * (n - 1) / 2);
    const std::vector<Span> cells = span_cells(n);
    REQUIRE(static_cast<int>(cells.size()) == span_cell_count(n));
    for (int c = 0; c < static_cast<int>(cells.size()); ++c) {
      CHECK(span_cell_index(n, cells[c].i, cells[c].j) == c);
      CHECK(cells[c].width() >= 2);
      if (c > 0) CHECK(cells[c - 1] < cells[c]);
    }
  }
}

TEST_CASE("enumerate_trees produces all distinct binary bracketings") {
  const int expected[] = {1, 2, 5, 14, 42, 132, 429};
  for (int n = 2; n <= 8; ++n) {
    const auto trees = enumerate_trees(n);
    CHECK(static_cast<int>(trees.size()) == expected[n - 2]);
    std::set<std::vector<Span>> unique(trees.begin(), trees.end());
    CHECK(unique.size() == trees.size());
    for (const auto& spans : trees) {
      CHECK(spans.size() == static_cast<size_t>(n - 1));
      ParseTree t{n, spans};
      t.sort_spans();
      CHECK(t.is_binary_tree());
    }
  }
}

TEST_CASE("the two marginal computations agree") {
  const RuleTensors g = random_grammar({3, 2, 5}, 17);
  const std::vector<int> words = {0, 3, 1, 4, 2, 0};
  const std::vector<double> a = span_label_marginals(g, words);
  const std::vector<double> b = span_label_marginals_backprop(g, words);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);

  // The whole-sentence span is always a constituent: its labels sum to 1.
  const int n = static_cast<int>(words.size());
  const int top = span_cell_index(n, 0, n - 1);
  double total = 0.0;
  for (int l = 0; l < 3; ++l) total += a[static_cast<size_t>(top) * 3 + l];
  CHECK(std::abs(total - 1.0) < 1e-9);

  const std::vector<double> per_span = span_marginals(g, words);
  REQUIRE(per_span.size() == a.size() / 3);
  for (size_t c = 0; c < per_span.size(); ++c) {
    const double row = a[c * 3] + a[c * 3 + 1] + a[c * 3 + 2];
    CHECK(std::abs(per_span[c] - row) < 1e-9);
    CHECK(per_span[c] >= -1e-12);
    CHECK(per_span[c] <= 1.0 + 1e-9);
  }
}

TEST_CASE("expected rule counts match log-space finite differences of inside") {
  const GrammarSizes sizes{2, 2, 3};
  RuleTensors g = random_grammar(sizes, 23);
  const std::vector<int> words = {0, 2, 1, 1};
  const RuleGrads counts = expected_counts(g, words);

  const double eps = 1e-5;
  auto fd = [&](std::vector<double>& table, size_t idx) {
    const double keep = table[idx];
    table[idx] = keep + eps;
    InsideChart c1;
    const double up = inside(g, words, &c1);
    table[idx] = keep - eps;
    InsideChart c2;
    const double dn = inside(g, words, &c2);
    table[idx] = keep;
    return (up - dn) / (2 * eps);
  };

  for (size_t i = 0; i < g.root.size(); ++i)
    CHECK(std::abs(counts.root[i] - fd(g.root, i)) < 5e-5);
  for (size_t i = 0; i < g.binary.size(); ++i)
    CHECK(std::abs(counts.binary[i] - fd(g.binary, i)) < 5e-5);
  for (size_t i = 0; i < g.lexical.size(); ++i)
    CHECK(std::abs(counts.lexical[i] - fd(g.lexical, i)) < 5e-5);

  // Counts are expectations: the root row is a distribution, the binary
  // total is the number of internal nodes, the lexical total the length.
  double root_total = 0.0, bin_total = 0.0, lex_total = 0.0;
  for (double v : counts.root) root_total += v;
  for (double v : counts.binary) bin_total += v;
  for (double v : counts.lexical) lex_total += v;
  CHECK(std::abs(root_total - 1.0) < 1e-9);
  CHECK(std::abs(bin_total - 3.0) < 1e-9);
  CHECK(std::abs(lex_total - 4.0) < 1e-9);
}

TEST_CASE("chart_op mirrors the plain kernels and differentiates exactly") {
  const GrammarSizes sizes{2, 2, 3};
  const RuleTensors rules = random_grammar(sizes, 31);
  const std::vector<int> words = {2, 0, 1};

  Graph g;
  Var root = g.constant(1, sizes.nonterminals, rules.root);
  Var binary = g.constant(sizes.nonterminals, sizes.pairs(), rules.binary);
  Var lexical = g.constant(sizes.preterminals, sizes.vocab, rules.lexical);
  ChartOutputs out = chart_op(g, root, binary, lexical, sizes, words, true);

  InsideChart chart;
  CHECK(std::abs(g.scalar_value(out.logp) - inside(rules, words, &chart)) < 1e-12);

  const std::vector<double> marg = span_label_marginals(rules, words);
  const std::vector<double>& node = g.value(out.label_marginals);
  REQUIRE(node.size() == marg.size());
  for (size_t i = 0; i < marg.size(); ++i) CHECK(std::abs(node[i] - marg[i]) < 1e-12);
}

TEST_CASE("chart_op gradient of logp equals expected counts") {
  const GrammarSizes sizes{2, 2, 3};
  const RuleTensors rules = random_grammar(sizes, 37);
  const std::vector<int> words = {1, 2, 0, 0, 1};

  ParamSet ps;
  ps.create("root", {1, sizes.nonterminals});
  ps.create("binary", {sizes.nonterminals, sizes.pairs()});
  ps.create("lexical", {sizes.preterminals, sizes.vocab});
  auto load = [&](const char* name, const std::vector<double>& src) {
    Tensor& t = ps.get(name);
    for (size_t i = 0; i < src.size(); ++i) t.data[i] = static_cast<float>(src[i]);
  };
  load("root", rules.root);
  load("binary", rules.binary);
  load("lexical", rules.lexical);

  // Re-read the (float32-rounded) scores so both sides see identical rules.
  RuleTensors quant = RuleTensors::zeros(sizes);
  for (size_t i = 0; i < quant.root.size(); ++i) quant.root[i] = ps.get("root").data[i];
  for (size_t i = 0; i < quant.binary.size(); ++i) quant.binary[i] = ps.get("binary").data[i];
  for (size_t i = 0; i < quant.lexical.size(); ++i)
    quant.lexical[i] = ps.get("lexical").data[i];

  Graph g;
  Var root = g.param(ps, "root");
  Var binary = g.param(ps, "binary");
  Var lexical = g.param(ps, "lexical");
  ChartOutputs out = chart_op(g, root, binary, lexical, sizes, words, false);
  g.backward(out.logp);

  const RuleGrads counts = expected_counts(quant, words);
  const auto& groot = g.grad(root);
  const auto& gbin = g.grad(binary);
  const auto& glex = g.grad(lexical);
  for (size_t i = 0; i < counts.root.size(); ++i)
    CHECK(std::abs(groot[i] - counts.root[i]) < 1e-10);
  for (size_t i = 0; i < counts.binary.size(); ++i)
    CHECK(std::abs(gbin[i] - counts.binary[i]) < 1e-10);
  for (size_t i = 0; i < counts.lexical.size(); ++i)
    CHECK(std::abs(glex[i] - counts.lexical[i]) < 1e-10);
}

TEST_CASE("chart oracle suite passes on a fresh seed") {
  const auto checks = chart_oracle_suite(11, 40);
  INFO(oracle_report(checks));
  CHECK(all_pass(checks));
}
