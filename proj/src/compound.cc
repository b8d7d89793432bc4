#include "gf/compound.h"

#include <cmath>

#include "gf/common.h"
#include "gf/layers.h"

namespace gf {

void CompoundConfig::validate() const {
  sizes.validate();
  check(z_dim >= 1 && embed_dim >= 1 && enc_embed_dim >= 1 && enc_hidden >= 1,
        "compound config dimensions must be positive");
}

void register_compound_params(const CompoundConfig& cfg, ParamSet& ps) {
  cfg.validate();
  const int e = cfg.embed_dim;
  const int S = cfg.sizes.symbols();
  ps.create("grammar.w_root", {1, e});
  ps.create("grammar.w_nt", {cfg.sizes.nonterminals, e});
  ps.create("grammar.w_pt", {cfg.sizes.preterminals, e});
  register_res_mlp(ps, "grammar.fs", e + cfg.z_dim, e);
  ps.create("grammar.root.head", {e, cfg.sizes.nonterminals});
  ps.create("grammar.binary.head", {e + cfg.z_dim, S * S});
  register_res_mlp(ps, "grammar.ft", e + cfg.z_dim, e);
  ps.create("grammar.lex.head", {e, cfg.sizes.vocab});

  ps.create("enc.embed", {cfg.sizes.vocab, cfg.enc_embed_dim});
  register_bilstm(ps, "enc", cfg.enc_embed_dim, cfg.enc_hidden);
  ps.create("enc.head.w", {2 * cfg.enc_hidden, 2 * cfg.z_dim});
  ps.create("enc.head.b", {1, 2 * cfg.z_dim});
}

RuleVars rule_prob_vars(Graph& g, const ParamSet& ps, const CompoundConfig& cfg, Var z) {
  cfg.validate();
  check(g.rows(z) == 1 && g.cols(z) == cfg.z_dim, "rule_prob_vars: z must be [1, z_dim]");
  for (double v : g.value(z))
    check(std::isfinite(v), "rule_prob_vars: z has non-finite entries");
  ParamLookup P(g, ps);

  RuleVars out;
  Var root_in = g.concat_cols(P("grammar.w_root"), z);
  out.root =
      g.log_softmax_rows(g.matmul(res_mlp(P, "grammar.fs", root_in), P("grammar.root.head")));

  Var zn = tile_rows(g, z, cfg.sizes.nonterminals);
  Var bin_in = g.concat_cols(P("grammar.w_nt"), zn);
  out.binary = g.log_softmax_rows(g.matmul(bin_in, P("grammar.binary.head")));

  Var zp = tile_rows(g, z, cfg.sizes.preterminals);
  Var lex_in = g.concat_cols(P("grammar.w_pt"), zp);
  out.lexical =
      g.log_softmax_rows(g.matmul(res_mlp(P, "grammar.ft", lex_in), P("grammar.lex.head")));
  return out;
}

RuleTensors rule_probs(const ParamSet& ps, const CompoundConfig& cfg,
                       const std::vector<double>& z) {
  check(static_cast<int>(z.size()) == cfg.z_dim, "rule_probs: |z| must equal z_dim");
  Graph g(false);
  Var zv = g.constant(1, cfg.z_dim, z);
  RuleVars rv = rule_prob_vars(g, ps, cfg, zv);
  RuleTensors out;
  out.sizes = cfg.sizes;
  out.root = g.value(rv.root);
  out.binary = g.value(rv.binary);
  out.lexical = g.value(rv.lexical);
  return out;
}

PosteriorVars encode_posterior(Graph& g, const ParamSet& ps, const CompoundConfig& cfg,
                               const std::vector<int>& words) {
  cfg.validate();
  const int n = static_cast<int>(words.size());
  check(n >= 1, "encode_posterior: sentence is empty");
  for (int w : words)
    check_input(0 <= w && w < cfg.sizes.vocab, "encode_posterior: word id ", w,
                " outside vocabulary of size ", cfg.sizes.vocab);
  ParamLookup P(g, ps);

  Var embeds = g.gather_rows(P("enc.embed"), words);
  Var states = bilstm_matrix(P, "enc", embeds, n, cfg.enc_hidden);
  Var pooled = g.max_rows(states);
  Var head = g.add(g.matmul(pooled, P("enc.head.w")), P("enc.head.b"));
  PosteriorVars out;
  out.mu = g.slice(head, 0, 1, 0, cfg.z_dim);
  out.logvar = g.slice(head, 0, 1, cfg.z_dim, 2 * cfg.z_dim);
  return out;
}

Var kl_gaussian(Graph& g, Var mu, Var logvar) {
  check(g.rows(mu) == 1 && g.rows(logvar) == 1 && g.cols(mu) == g.cols(logvar),
        "kl_gaussian: mu and logvar must be matching row vectors");
  Var terms = g.add_scalar(g.sub(g.add(g.exp_op(logvar), g.mul(mu, mu)), logvar), -1.0);
  return g.mul_scalar(g.sum_all(terms), 0.5);
}

SentenceForward compound_forward(Graph& g, const ParamSet& ps, const CompoundConfig& cfg,
                                 const std::vector<int>& words, Rng* rng,
                                 bool want_marginals) {
  SentenceForward f;
  f.post = encode_posterior(g, ps, cfg, words);
  if (rng != nullptr) {
    std::vector<double> eps(static_cast<size_t>(cfg.z_dim));
    for (double& e : eps) e = rng->normal();
    Var noise = g.constant(1, cfg.z_dim, std::move(eps));
    f.z = g.add(f.post.mu, g.mul(g.exp_op(g.mul_scalar(f.post.logvar, 0.5)), noise));
  } else {
    f.z = f.post.mu;
  }
  f.rules = rule_prob_vars(g, ps, cfg, f.z);
  f.chart = chart_op(g, f.rules.root, f.rules.binary, f.rules.lexical, cfg.sizes, words,
                     want_marginals);
  f.kl = kl_gaussian(g, f.post.mu, f.post.logvar);
  f.neg_elbo = g.add(g.mul_scalar(f.chart.logp, -1.0), f.kl);
  return f;
}

}  // namespace gf
