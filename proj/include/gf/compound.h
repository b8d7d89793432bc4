#pragma once

// Sentence-conditioned PCFG parameterization.  A latent vector z (one per
// sentence) modulates the rule distributions:
//
//   root(A)      = softmax_A  ( U_root  . f_s([w_root; z]) )
//   binary(A,BC) = softmax_BC ( U_bin   . [w_A; z] )
//   lexical(T,w) = softmax_w  ( U_word  . f_t([w_T; z]) )
//
// where f_s / f_t are input linears followed by two residual ReLU blocks.
// Training maximizes a single-sample evidence lower bound: z is drawn from a
// diagonal-Gaussian posterior q(z|sentence) produced by a BiLSTM encoder, and
// the loss is -log p(sentence|z) + KL(q || N(0, I)).  At inference time the
// posterior mean is used and no sampling happens.

#include <string>
#include <vector>

#include "gf/chart.h"
#include "gf/graph.h"
#include "gf/rng.h"
#include "gf/tensor.h"

namespace gf {

struct CompoundConfig {
  GrammarSizes sizes{30, 60, 0};  // vocab filled in from the corpus
  int z_dim = 64;
  int embed_dim = 256;   // symbol embeddings and f_s/f_t width
  int enc_embed_dim = 256;
  int enc_hidden = 256;  // per-direction LSTM state size

  void validate() const;
};

// Creates every grammar and posterior tensor in a fixed order (the order is
// the checkpoint layout and the initialization draw order).
void register_compound_params(const CompoundConfig& cfg, ParamSet& ps);

struct RuleVars {
  Var root;     // [1, N] log probabilities
  Var binary;   // [N, S*S]
  Var lexical;  // [P, V]
};

// Log rule probabilities for latent vector node z ([1, z_dim]).
RuleVars rule_prob_vars(Graph& g, const ParamSet& ps, const CompoundConfig& cfg, Var z);

// Convenience evaluation path: same computation, plain tensors out.
RuleTensors rule_probs(const ParamSet& ps, const CompoundConfig& cfg,
                       const std::vector<double>& z);

struct PosteriorVars {
  Var mu;      // [1, z_dim]
  Var logvar;  // [1, z_dim]
};

// BiLSTM over word embeddings, max-pooled over time, linear head.
PosteriorVars encode_posterior(Graph& g, const ParamSet& ps, const CompoundConfig& cfg,
                               const std::vector<int>& words);

// KL(N(mu, diag(exp(logvar))) || N(0, I)), a [1,1] node.
Var kl_gaussian(Graph& g, Var mu, Var logvar);

// Full per-sentence forward pass shared by training and evaluation.
struct SentenceForward {
  PosteriorVars post;
  Var z;               // sampled (training) or posterior mean (rng == nullptr)
  RuleVars rules;
  ChartOutputs chart;  // logp and, when requested, span-label marginals
  Var kl;              // [1,1]
  Var neg_elbo;        // [1,1]: -logp + kl
};

SentenceForward compound_forward(Graph& g, const ParamSet& ps, const CompoundConfig& cfg,
                                 const std::vector<int>& words, Rng* rng,
                                 bool want_marginals);

}  // namespace gf
