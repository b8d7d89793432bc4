#pragma once

// Video–span matching.  For every span (i,j) of width >= 2 the sentence-side
// representation is
//
//   c = sum_k p(k | span) * f_k(mean(h_i..h_j))
//
// with h from a dedicated BiLSTM and label posteriors from the parser's
// span-label marginals.  c is projected into one gated embedding per expert,
// compared against the fused video vectors by attention-weighted cosine
// similarity, and scored with a two-sided hinge against one negative span
// set and one negative video drawn from the same batch.  The per-sentence
// loss is the span-marginal-weighted sum of the hinges, so its gradient
// shapes the grammar through the marginals as well as the matching networks.
//
// Negative samples are imported as detached constants: the loss for a pair
// is defined with the sampled negatives held fixed.

#include <string>
#include <vector>

#include "gf/graph.h"
#include "gf/tensor.h"

namespace gf {

struct MatchConfig {
  int vocab = 0;
  int embed_dim = 512;
  int hidden = 512;     // per-direction LSTM size
  int span_dim = 512;   // c
  int joint_dim = 512;  // expert embedding space (matches fusion)
  int num_experts = 1;  // M
  int labels = 30;      // K = |N|
  double margin = 0.2;  // epsilon

  void validate() const;
};

void register_match_params(const MatchConfig& cfg, ParamSet& ps);

// Gated embedding: xi1 = W1 c + b1; xi2 = xi1 * sigmoid(W2 xi1 + b2);
// xi = xi2 / ||xi2||.  Applies row-wise; prefix selects the expert's weights.
Var gated_embed(Graph& g, const ParamSet& ps, const std::string& prefix, Var c);

// Sentence side of one pair, rows ordered like span_cells(n).
struct SpanSide {
  Var c;                // [cells, span_dim]
  Var omega;            // [cells, M] attention over experts
  std::vector<Var> xi;  // M entries, each [cells, joint_dim]
  Var span_marginals;   // [cells, 1]
};

SpanSide span_side(Graph& g, const ParamSet& ps, const MatchConfig& cfg,
                   const std::vector<int>& words, Var label_marginals);

// Detached snapshots exchanged between pairs of a batch.
struct SpanSideValues {
  int cells = 0;
  int experts = 0;
  std::vector<double> omega;             // [cells, M]
  std::vector<std::vector<double>> xi;   // M x [cells, joint_dim]
};
struct VideoSideValues {
  std::vector<std::vector<double>> psi;  // M x [1, joint_dim]
};

SpanSideValues detach_span_side(const Graph& g, const SpanSide& side);
VideoSideValues detach_video_side(const Graph& g, const std::vector<Var>& psi);

// o rows: per span, sum_i omega_i * cos(xi_i, psi_i);  [cells, 1].
Var similarity_rows(Graph& g, Var omega, const std::vector<Var>& xi,
                    const std::vector<Var>& psi);

// Marginal-weighted two-sided hinge loss for one (sentence, video) pair.
// neg_rows[cell] selects the negative sentence's span used against this
// cell's positive span.
Var matching_loss(Graph& g, const MatchConfig& cfg, const SpanSide& pos,
                  const std::vector<Var>& psi, const SpanSideValues& neg_span,
                  const std::vector<int>& neg_rows, const VideoSideValues& neg_video);

}  // namespace gf
