#include "gf/oracles.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "gf/chart.h"
#include "gf/common.h"
#include "gf/compound.h"
#include "gf/fdcheck.h"
#include "gf/fusion.h"
#include "gf/grounding.h"
#include "gf/model.h"
#include "gf/rng.h"
#include "gf/trainer.h"

namespace gf {

namespace {

// ---- enumeration-based references, probability space ----

struct ProbRules {
  GrammarSizes sizes;
  std::vector<double> root;                  // [N]
  std::vector<std::vector<double>> binary;   // [N][S*S]
  std::vector<std::vector<double>> lexical;  // [P][V]
};

ProbRules to_probs(const RuleTensors& g) {
  ProbRules p;
  p.sizes = g.sizes;
  const int N = g.sizes.nonterminals, S = g.sizes.symbols(), V = g.sizes.vocab;
  p.root.resize(static_cast<size_t>(N));
  for (int a = 0; a < N; ++a) p.root[static_cast<size_t>(a)] = std::exp(g.root[static_cast<size_t>(a)]);
  p.binary.assign(static_cast<size_t>(N), std::vector<double>(static_cast<size_t>(S) * S));
  for (int a = 0; a < N; ++a)
    for (int bc = 0; bc < S * S; ++bc)
      p.binary[static_cast<size_t>(a)][static_cast<size_t>(bc)] =
          std::exp(g.binary[static_cast<size_t>(a) * S * S + bc]);
  p.lexical.assign(static_cast<size_t>(g.sizes.preterminals),
                   std::vector<double>(static_cast<size_t>(V)));
  for (int t = 0; t < g.sizes.preterminals; ++t)
    for (int w = 0; w < V; ++w)
      p.lexical[static_cast<size_t>(t)][static_cast<size_t>(w)] =
          std::exp(g.lexical[static_cast<size_t>(t) * V + w]);
  return p;
}

// One fixed bracketing with per-node symbol scores.
struct TreeScorer {
  const ProbRules& pr;
  const std::vector<int>& words;
  const std::vector<Span>& spans;  // sorted, includes the full span
  std::map<Span, std::vector<double>> up;

  TreeScorer(const ProbRules& p, const std::vector<int>& w, const std::vector<Span>& s)
      : pr(p), words(w), spans(s) {}

  bool has(int i, int j) const {
    return std::binary_search(spans.begin(), spans.end(), Span{i, j});
  }
  int split_of(int i, int j) const {
    for (int k = i; k < j; ++k)
      if ((k == i || has(i, k)) && (k + 1 == j || has(k + 1, j))) return k;
    fail("oracle: bracketing has no split for (", i, ",", j, ")");
  }

  // Total mass per symbol at (i,j), summing over labelings below.
  const std::vector<double>& up_at(int i, int j) {
    const Span key{i, j};
    auto it = up.find(key);
    if (it != up.end()) return it->second;
    const int S = pr.sizes.symbols(), N = pr.sizes.nonterminals;
    std::vector<double> v(static_cast<size_t>(S), 0.0);
    if (i == j) {
      for (int t = 0; t < pr.sizes.preterminals; ++t)
        v[static_cast<size_t>(N + t)] =
            pr.lexical[static_cast<size_t>(t)][static_cast<size_t>(words[static_cast<size_t>(i)])];
    } else {
      const int k = split_of(i, j);
      const std::vector<double>& l = up_at(i, k);
      const std::vector<double>& r = up_at(k + 1, j);
      for (int a = 0; a < N; ++a) {
        double sum = 0.0;
        const std::vector<double>& row = pr.binary[static_cast<size_t>(a)];
        for (int b = 0; b < S; ++b) {
          if (l[static_cast<size_t>(b)] == 0.0) continue;
          double inner = 0.0;
          for (int c = 0; c < S; ++c)
            inner += row[static_cast<size_t>(b) * S + c] * r[static_cast<size_t>(c)];
          sum += l[static_cast<size_t>(b)] * inner;
        }
        v[static_cast<size_t>(a)] = sum;
      }
    }
    return up.emplace(key, std::move(v)).first->second;
  }

  // Max mass per symbol at (i,j), maximizing over labelings below.
  std::vector<double> best_at(int i, int j) {
    const int S = pr.sizes.symbols(), N = pr.sizes.nonterminals;
    std::vector<double> v(static_cast<size_t>(S), 0.0);
    if (i == j) {
      for (int t = 0; t < pr.sizes.preterminals; ++t)
        v[static_cast<size_t>(N + t)] =
            pr.lexical[static_cast<size_t>(t)][static_cast<size_t>(words[static_cast<size_t>(i)])];
      return v;
    }
    const int k = split_of(i, j);
    const std::vector<double> l = best_at(i, k);
    const std::vector<double> r = best_at(k + 1, j);
    for (int a = 0; a < N; ++a) {
      double best = 0.0;
      const std::vector<double>& row = pr.binary[static_cast<size_t>(a)];
      for (int b = 0; b < S; ++b)
        for (int c = 0; c < S; ++c)
          best = std::max(best, row[static_cast<size_t>(b) * S + c] * l[static_cast<size_t>(b)] *
                                    r[static_cast<size_t>(c)]);
      v[static_cast<size_t>(a)] = best;
    }
    return v;
  }

  double total() {
    const std::vector<double>& top = up_at(0, static_cast<int>(words.size()) - 1);
    double z = 0.0;
    for (int a = 0; a < pr.sizes.nonterminals; ++a)
      z += pr.root[static_cast<size_t>(a)] * top[static_cast<size_t>(a)];
    return z;
  }

  double best_total() {
    const std::vector<double> top = best_at(0, static_cast<int>(words.size()) - 1);
    double best = 0.0;
    for (int a = 0; a < pr.sizes.nonterminals; ++a)
      best = std::max(best, pr.root[static_cast<size_t>(a)] * top[static_cast<size_t>(a)]);
    return best;
  }

  // Adds this tree's unnormalized (span, label) masses into `acc`
  // ([span_cell_count(n), N], canonical cell order).
  void accumulate_marginals(std::vector<double>* acc) {
    const int n = static_cast<int>(words.size());
    const int N = pr.sizes.nonterminals, S = pr.sizes.symbols();
    up_at(0, n - 1);
    // down[(i,j)][A]: mass arriving from above with (i,j) labeled A.
    std::map<Span, std::vector<double>> down;
    down[{0, n - 1}] = [&] {
      std::vector<double> d(static_cast<size_t>(S), 0.0);
      for (int a = 0; a < N; ++a) d[static_cast<size_t>(a)] = pr.root[static_cast<size_t>(a)];
      return d;
    }();
    // Spans sorted ascending means parents come before children when widths
    // shrink left-to-right?  Not in general; recurse explicitly instead.
    std::function<void(int, int)> walk = [&](int i, int j) {
      const std::vector<double>& d = down.at({i, j});
      if (i != j) {
        for (int a = 0; a < N; ++a)
          (*acc)[static_cast<size_t>(span_cell_index(n, i, j)) * N + a] +=
              d[static_cast<size_t>(a)] * up_at(i, j)[static_cast<size_t>(a)];
        const int k = split_of(i, j);
        const std::vector<double>& l = up_at(i, k);
        const std::vector<double>& r = up_at(k + 1, j);
        std::vector<double> dl(static_cast<size_t>(S), 0.0), dr(static_cast<size_t>(S), 0.0);
        for (int a = 0; a < N; ++a) {
          if (d[static_cast<size_t>(a)] == 0.0) continue;
          const std::vector<double>& row = pr.binary[static_cast<size_t>(a)];
          for (int b = 0; b < S; ++b)
            for (int c = 0; c < S; ++c) {
              const double w = d[static_cast<size_t>(a)] * row[static_cast<size_t>(b) * S + c];
              dl[static_cast<size_t>(b)] += w * r[static_cast<size_t>(c)];
              dr[static_cast<size_t>(c)] += w * l[static_cast<size_t>(b)];
            }
        }
        down[{i, k}] = std::move(dl);
        down[{k + 1, j}] = std::move(dr);
        walk(i, k);
        walk(k + 1, j);
      }
    };
    walk(0, n - 1);
  }
};

RuleTensors random_rules(GrammarSizes sizes, Rng& rng) {
  RuleTensors g = RuleTensors::zeros(sizes);
  auto fill_row = [&rng](double* row, int len) {
    double mx = -1e300;
    for (int i = 0; i < len; ++i) {
      row[i] = rng.normal();
      mx = std::max(mx, row[i]);
    }
    double z = 0.0;
    for (int i = 0; i < len; ++i) z += std::exp(row[i] - mx);
    const double lz = mx + std::log(z);
    for (int i = 0; i < len; ++i) row[i] -= lz;
  };
  fill_row(g.root.data(), sizes.nonterminals);
  for (int a = 0; a < sizes.nonterminals; ++a)
    fill_row(&g.binary[static_cast<size_t>(a) * sizes.pairs()], sizes.pairs());
  for (int t = 0; t < sizes.preterminals; ++t)
    fill_row(&g.lexical[static_cast<size_t>(t) * sizes.vocab], sizes.vocab);
  return g;
}

struct Worst {
  double dev = 0.0;
  std::string where;
  void update(double d, const std::string& w) {
    if (d > dev) {
      dev = d;
      where = w;
    }
  }
};

OracleCheck finish(const std::string& name, const Worst& w, double tol) {
  OracleCheck c;
  c.name = name;
  c.worst = w.dev;
  c.tolerance = tol;
  c.pass = w.dev <= tol;
  c.detail = w.where;
  return c;
}

OracleCheck from_fd(const std::string& name, const FdReport& r, double tol) {
  OracleCheck c;
  c.name = name;
  c.worst = r.max_rel_err;
  c.tolerance = tol;
  c.pass = r.ok(tol);
  c.detail = r.summary();
  return c;
}

}  // namespace

std::vector<OracleCheck> chart_oracle_suite(uint64_t seed, int instances) {
  Rng rng(derive_seed(seed, 0x43484152ULL));
  Worst w_inside, w_viterbi, w_marg;
  for (int inst = 0; inst < instances; ++inst) {
    GrammarSizes sizes;
    sizes.nonterminals = 1 + static_cast<int>(rng.uniform_int(3));
    sizes.preterminals = 1 + static_cast<int>(rng.uniform_int(3));
    sizes.vocab = 2 + static_cast<int>(rng.uniform_int(4));
    const int n = 2 + static_cast<int>(rng.uniform_int(7));
    const RuleTensors rules = random_rules(sizes, rng);
    std::vector<int> words(static_cast<size_t>(n));
    for (int& w : words) w = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(sizes.vocab)));
    const std::string tag = strcat_msg("instance ", inst, " (N=", sizes.nonterminals,
                                       " P=", sizes.preterminals, " V=", sizes.vocab,
                                       " n=", n, ")");

    const ProbRules pr = to_probs(rules);
    const auto trees = enumerate_trees(n);
    double z = 0.0, best = 0.0;
    const int cells = span_cell_count(n);
    std::vector<double> acc(static_cast<size_t>(cells) * sizes.nonterminals, 0.0);
    for (const auto& spans : trees) {
      TreeScorer scorer(pr, words, spans);
      z += scorer.total();
      best = std::max(best, scorer.best_total());
      scorer.accumulate_marginals(&acc);
    }

    InsideChart chart;
    const double logp = inside(rules, words, &chart);
    w_inside.update(std::abs(logp - std::log(z)), tag);

    const ParseTree vit = viterbi_parse(rules, words);
    TreeScorer vit_scorer(pr, words, vit.spans);
    w_viterbi.update(std::abs(std::log(vit_scorer.best_total()) - std::log(best)), tag);

    const std::vector<double> marg = span_label_marginals(rules, words);
    for (size_t i = 0; i < acc.size(); ++i)
      w_marg.update(std::abs(marg[i] - acc[i] / z), tag);
  }
  return {
      finish("inside log-mass vs tree enumeration", w_inside, 1e-6),
      finish("viterbi best score vs enumerated max", w_viterbi, 1e-9),
      finish("span-label posteriors vs enumeration", w_marg, 1e-6),
  };
}

namespace {

CompoundConfig tiny_compound() {
  CompoundConfig cc;
  cc.sizes = {2, 3, 8};
  cc.z_dim = 4;
  cc.embed_dim = 12;
  cc.enc_embed_dim = 10;
  cc.enc_hidden = 6;
  return cc;
}

ModelConfig tiny_model(Variant variant) {
  ModelConfig mc;
  mc.variant = variant;
  mc.compound = tiny_compound();
  mc.match.embed_dim = 10;
  mc.match.hidden = 7;
  mc.match.span_dim = 9;
  // Cosine scores live in [-1, 1], so a margin of 3 keeps every hinge term
  // strictly active: the loss is smooth around the probe point and the
  // finite-difference secant never straddles a kink.
  mc.match.margin = 3.0;
  mc.fusion.joint_dim = 8;
  mc.fusion.layers = 2;
  mc.fusion.ffn_dim = 12;
  mc.fusion.heads = 2;
  mc.fusion.chunks = 3;
  std::vector<ExpertSpec> experts = {{"objx", 6, "object"}};
  if (variant == Variant::MmcPcfg) experts.push_back({"audy", 5, "other"});
  mc.finalize(8, experts);
  return mc;
}

VideoFeatures random_features(const std::vector<ExpertSpec>& experts,
                              const std::vector<int>& lengths, Rng& rng) {
  VideoFeatures vf;
  for (size_t m = 0; m < experts.size(); ++m) {
    const int len = lengths[m];
    std::vector<float> block(static_cast<size_t>(len) * experts[m].raw_dim);
    for (float& x : block) x = static_cast<float>(rng.normal());
    vf.streams.push_back(std::move(block));
    vf.lengths.push_back(len);
  }
  return vf;
}

// Frozen negative-side snapshots, captured once from the unperturbed
// parameters so the finite-difference loss treats them as constants (which
// is exactly how training treats sampled negatives).
struct FrozenNegatives {
  SpanSideValues span;
  VideoSideValues video;
  std::vector<int> rows;
};

FrozenNegatives freeze_negatives(const ParamSet& ps, const ModelConfig& mc,
                                 const std::vector<int>& neg_words,
                                 const VideoFeatures& neg_vf, int pos_cells,
                                 Rng& rng) {
  Graph g(false);
  PairOutputs po = model_forward(g, ps, mc, neg_words, &neg_vf, nullptr, true);
  FrozenNegatives fn;
  fn.span = detach_span_side(g, po.span);
  fn.video = detach_video_side(g, po.psi);
  fn.rows.resize(static_cast<size_t>(pos_cells));
  for (int& r : fn.rows)
    r = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(fn.span.cells)));
  return fn;
}

}  // namespace

std::vector<OracleCheck> gradient_oracle_suite(uint64_t seed) {
  std::vector<OracleCheck> out;
  const std::vector<int> pos_words = {1, 2, 7, 3};
  const std::vector<int> neg_words = {2, 4, 1};
  const double tol = 1e-3;

  {
    const CompoundConfig cc = tiny_compound();
    ParamSet ps;
    register_compound_params(cc, ps);
    init_params(ps, derive_seed(seed, 1));
    auto build = [&](Graph& g) {
      Rng zrng(7);
      return compound_forward(g, ps, cc, pos_words, &zrng, false).neg_elbo;
    };
    out.push_back(from_fd("elbo gradient vs finite differences",
                          finite_difference_check(ps, build, 1e-3, 4, seed), tol));
  }
  {
    const CompoundConfig cc = tiny_compound();
    ParamSet ps;
    register_compound_params(cc, ps);
    init_params(ps, derive_seed(seed, 2));
    Rng wr(derive_seed(seed, 3));
    const int cells = span_cell_count(static_cast<int>(pos_words.size()));
    std::vector<double> weights(static_cast<size_t>(cells) * cc.sizes.nonterminals);
    for (double& w : weights) w = wr.normal();
    auto build = [&, weights](Graph& g) {
      SentenceForward sf = compound_forward(g, ps, cc, pos_words, nullptr, true);
      Var w = g.constant(cells, cc.sizes.nonterminals, weights);
      return g.sum_all(g.mul(sf.chart.label_marginals, w));
    };
    out.push_back(from_fd("marginal-weighted chart gradient vs finite differences",
                          finite_difference_check(ps, build, 1e-3, 4, seed), tol));
  }
  for (const Variant variant : {Variant::VcPcfg, Variant::MmcPcfg}) {
    const ModelConfig mc = tiny_model(variant);
    ParamSet ps;
    register_model_params(mc, ps);
    init_params(ps, derive_seed(seed, 4 + static_cast<uint64_t>(variant == Variant::MmcPcfg)));
    Rng fr(derive_seed(seed, 6));
    const VideoFeatures pos_vf = random_features(mc.fusion.experts, {5, 4}, fr);
    const VideoFeatures neg_vf = random_features(mc.fusion.experts, {3, 6}, fr);
    const int pos_cells = span_cell_count(static_cast<int>(pos_words.size()));
    const FrozenNegatives fn = freeze_negatives(ps, mc, neg_words, neg_vf, pos_cells, fr);
    auto build = [&](Graph& g) {
      PairOutputs po = model_forward(g, ps, mc, pos_words, &pos_vf, nullptr, true);
      return matching_loss(g, mc.match, po.span, po.psi, fn.span, fn.rows, fn.video);
    };
    const char* name = variant == Variant::VcPcfg
                           ? "single-expert matching gradient vs finite differences"
                           : "fused matching gradient vs finite differences";
    out.push_back(from_fd(name, finite_difference_check(ps, build, 1e-3, 4, seed), tol));
  }
  {
    const ModelConfig mc = tiny_model(Variant::MmcPcfg);
    ParamSet ps;
    register_model_params(mc, ps);
    init_params(ps, derive_seed(seed, 8));
    Rng fr(derive_seed(seed, 9));
    const VideoFeatures vf = random_features(mc.fusion.experts, {7, 2}, fr);
    std::vector<std::vector<double>> readout;
    for (size_t m = 0; m < mc.fusion.experts.size(); ++m) {
      readout.emplace_back(static_cast<size_t>(mc.fusion.joint_dim));
      for (double& w : readout.back()) w = fr.normal();
    }
    auto build = [&, readout](Graph& g) {
      std::vector<Var> psi = fuse(g, ps, mc.fusion, vf);
      Var loss = g.zeros(1, 1);
      for (size_t m = 0; m < psi.size(); ++m) {
        Var w = g.constant(1, mc.fusion.joint_dim, readout[m]);
        loss = g.add(loss, g.sum_all(g.mul(psi[m], w)));
      }
      return loss;
    };
    out.push_back(from_fd("fused-stack gradient vs finite differences",
                          finite_difference_check(ps, build, 1e-3, 4, seed), tol));
  }
  return out;
}

bool all_pass(const std::vector<OracleCheck>& checks) {
  for (const OracleCheck& c : checks)
    if (!c.pass) return false;
  return !checks.empty();
}

std::string oracle_report(const std::vector<OracleCheck>& checks) {
  std::string out;
  char buf[64];
  for (const OracleCheck& c : checks) {
    std::snprintf(buf, sizeof buf, "%.3e (tolerance %.0e)", c.worst, c.tolerance);
    out += (c.pass ? "ok   " : "FAIL ") + c.name + ": worst " + buf;
    if (!c.pass && !c.detail.empty()) out += "\n     " + c.detail;
    out += "\n";
  }
  return out;
}

}  // namespace gf
