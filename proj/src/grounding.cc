#include "gf/grounding.h"

#include <string>

#include "gf/chart.h"
#include "gf/common.h"
#include "gf/layers.h"

namespace gf {

void MatchConfig::validate() const {
  check(vocab >= 1, "match config: vocabulary size not set");
  check(embed_dim >= 1 && hidden >= 1 && span_dim >= 1 && joint_dim >= 1 && labels >= 1,
        "match config dimensions must be positive");
  check(num_experts >= 1, "match config: at least one expert required");
  check(margin > 0.0, "match config: margin must be positive");
}

namespace {

std::string gate_prefix(int expert) { return "match.gate" + std::to_string(expert); }

}  // namespace

void register_match_params(const MatchConfig& cfg, ParamSet& ps) {
  cfg.validate();
  ps.create("match.embed", {cfg.vocab, cfg.embed_dim});
  register_bilstm(ps, "match", cfg.embed_dim, cfg.hidden);
  ps.create("match.fk.w", {2 * cfg.hidden, cfg.labels * cfg.span_dim});
  ps.create("match.fk.b", {1, cfg.labels * cfg.span_dim});
  for (int m = 0; m < cfg.num_experts; ++m) {
    ps.create(gate_prefix(m) + ".w1", {cfg.span_dim, cfg.joint_dim});
    ps.create(gate_prefix(m) + ".b1", {1, cfg.joint_dim});
    ps.create(gate_prefix(m) + ".w2", {cfg.joint_dim, cfg.joint_dim});
    ps.create(gate_prefix(m) + ".b2", {1, cfg.joint_dim});
  }
  ps.create("match.attn.u", {cfg.span_dim, cfg.num_experts});
}

Var gated_embed(Graph& g, const ParamSet& ps, const std::string& prefix, Var c) {
  ParamLookup P(g, ps);
  Var xi1 = g.add(g.matmul(c, P(prefix + ".w1")), P(prefix + ".b1"));
  Var gate = g.sigmoid(g.add(g.matmul(xi1, P(prefix + ".w2")), P(prefix + ".b2")));
  return g.l2_normalize_rows(g.mul(xi1, gate));
}

SpanSide span_side(Graph& g, const ParamSet& ps, const MatchConfig& cfg,
                   const std::vector<int>& words, Var label_marginals) {
  cfg.validate();
  const int n = static_cast<int>(words.size());
  check(n >= 2, "span_side: need at least 2 tokens");
  const int cells = span_cell_count(n);
  check(g.rows(label_marginals) == cells && g.cols(label_marginals) == cfg.labels,
        "span_side: label marginals must be [", cells, ",", cfg.labels, "], got [",
        g.rows(label_marginals), ",", g.cols(label_marginals), "]");
  for (int w : words)
    check(0 <= w && w < cfg.vocab, "span_side: word id ", w, " outside vocabulary");

  ParamLookup P(g, ps);
  Var embeds = g.gather_rows(P("match.embed"), words);
  Var states = bilstm_matrix(P, "match", embeds, n, cfg.hidden);
  const int sdim = 2 * cfg.hidden;

  std::vector<Var> mean_rows_list;
  mean_rows_list.reserve(static_cast<size_t>(cells));
  for (const Span& s : span_cells(n))
    mean_rows_list.push_back(g.mean_rows(g.slice(states, s.i, s.j + 1, 0, sdim)));
  Var means = g.concat_rows(mean_rows_list);

  Var fk = g.add(g.matmul(means, P("match.fk.w")), P("match.fk.b"));
  Var posterior = g.normalize_rows_sum(label_marginals);

  std::vector<Var> c_rows;
  c_rows.reserve(static_cast<size_t>(cells));
  for (int cell = 0; cell < cells; ++cell) {
    Var labelled = g.reshape(g.slice(fk, cell, cell + 1, 0, cfg.labels * cfg.span_dim),
                             cfg.labels, cfg.span_dim);
    Var p = g.slice(posterior, cell, cell + 1, 0, cfg.labels);
    c_rows.push_back(g.matmul(p, labelled));
  }

  SpanSide side;
  side.c = g.concat_rows(c_rows);
  side.omega = g.softmax_rows(g.matmul(side.c, P("match.attn.u")));
  side.xi.reserve(static_cast<size_t>(cfg.num_experts));
  for (int m = 0; m < cfg.num_experts; ++m)
    side.xi.push_back(gated_embed(g, ps, gate_prefix(m), side.c));
  side.span_marginals =
      g.matmul(label_marginals,
               g.constant(cfg.labels, 1, std::vector<double>(
                                              static_cast<size_t>(cfg.labels), 1.0)));
  return side;
}

SpanSideValues detach_span_side(const Graph& g, const SpanSide& side) {
  SpanSideValues v;
  v.cells = g.rows(side.c);
  v.experts = static_cast<int>(side.xi.size());
  v.omega = g.value(side.omega);
  v.xi.reserve(side.xi.size());
  for (Var x : side.xi) v.xi.push_back(g.value(x));
  return v;
}

VideoSideValues detach_video_side(const Graph& g, const std::vector<Var>& psi) {
  VideoSideValues v;
  v.psi.reserve(psi.size());
  for (Var p : psi) v.psi.push_back(g.value(p));
  return v;
}

Var similarity_rows(Graph& g, Var omega, const std::vector<Var>& xi,
                    const std::vector<Var>& psi) {
  const int M = static_cast<int>(xi.size());
  check(M >= 1 && static_cast<int>(psi.size()) == M && g.cols(omega) == M,
        "similarity_rows: expert counts disagree");
  Var cosmat = g.cosine_rows(xi[0], psi[0]);
  for (int m = 1; m < M; ++m)
    cosmat = g.concat_cols(cosmat, g.cosine_rows(xi[static_cast<size_t>(m)],
                                                 psi[static_cast<size_t>(m)]));
  Var ones = g.constant(M, 1, std::vector<double>(static_cast<size_t>(M), 1.0));
  return g.matmul(g.mul(omega, cosmat), ones);
}

Var matching_loss(Graph& g, const MatchConfig& cfg, const SpanSide& pos,
                  const std::vector<Var>& psi, const SpanSideValues& neg_span,
                  const std::vector<int>& neg_rows, const VideoSideValues& neg_video) {
  cfg.validate();
  const int cells = g.rows(pos.c);
  const int M = cfg.num_experts;
  check(static_cast<int>(neg_rows.size()) == cells,
        "matching_loss: one negative row per span required");
  check(neg_span.experts == M && static_cast<int>(neg_video.psi.size()) == M,
        "matching_loss: negative snapshots disagree on expert count");
  for (int r : neg_rows)
    check(0 <= r && r < neg_span.cells, "matching_loss: negative row ", r,
          " outside snapshot of ", neg_span.cells, " spans");

  // Selected rows of the negative sentence's snapshot, as constants.
  std::vector<double> omega_sel(static_cast<size_t>(cells) * M);
  for (int cell = 0; cell < cells; ++cell)
    for (int m = 0; m < M; ++m)
      omega_sel[static_cast<size_t>(cell) * M + m] =
          neg_span.omega[static_cast<size_t>(neg_rows[static_cast<size_t>(cell)]) * M + m];
  Var neg_omega = g.constant(cells, M, std::move(omega_sel));
  std::vector<Var> neg_xi(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m) {
    std::vector<double> block(static_cast<size_t>(cells) * cfg.joint_dim);
    const std::vector<double>& src = neg_span.xi[static_cast<size_t>(m)];
    for (int cell = 0; cell < cells; ++cell) {
      const size_t from =
          static_cast<size_t>(neg_rows[static_cast<size_t>(cell)]) * cfg.joint_dim;
      std::copy(src.begin() + static_cast<long>(from),
                src.begin() + static_cast<long>(from + cfg.joint_dim),
                block.begin() + static_cast<size_t>(cell) * cfg.joint_dim);
    }
    neg_xi[static_cast<size_t>(m)] = g.constant(cells, cfg.joint_dim, std::move(block));
  }
  std::vector<Var> neg_psi(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m)
    neg_psi[static_cast<size_t>(m)] =
        g.constant(1, cfg.joint_dim, neg_video.psi[static_cast<size_t>(m)]);

  Var o_pos = similarity_rows(g, pos.omega, pos.xi, psi);
  Var o_neg_span = similarity_rows(g, neg_omega, neg_xi, psi);
  Var o_neg_video = similarity_rows(g, pos.omega, pos.xi, neg_psi);

  Var h = g.add(g.relu(g.add_scalar(g.sub(o_neg_span, o_pos), cfg.margin)),
                g.relu(g.add_scalar(g.sub(o_neg_video, o_pos), cfg.margin)));
  return g.sum_all(g.mul(pos.span_marginals, h));
}

}  // namespace gf
