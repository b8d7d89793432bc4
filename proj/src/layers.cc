#include "gf/layers.h"

namespace gf {

Var ParamLookup::operator()(const std::string& name) {
  auto it = cache.find(name);
  if (it != cache.end()) return it->second;
  Var v = g.param(ps, name);
  cache.emplace(name, v);
  return v;
}

void register_res_mlp(ParamSet& ps, const std::string& prefix, int in_dim, int dim) {
  ps.create(prefix + ".in.w", {in_dim, dim});
  ps.create(prefix + ".in.b", {1, dim});
  ps.create(prefix + ".res1.w", {dim, dim});
  ps.create(prefix + ".res1.b", {1, dim});
  ps.create(prefix + ".res2.w", {dim, dim});
  ps.create(prefix + ".res2.b", {1, dim});
}

Var res_mlp(ParamLookup& P, const std::string& prefix, Var x) {
  Graph& g = P.g;
  Var h = g.add(g.matmul(x, P(prefix + ".in.w")), P(prefix + ".in.b"));
  h = g.add(h, g.relu(g.add(g.matmul(h, P(prefix + ".res1.w")), P(prefix + ".res1.b"))));
  h = g.add(h, g.relu(g.add(g.matmul(h, P(prefix + ".res2.w")), P(prefix + ".res2.b"))));
  return h;
}

Var tile_rows(Graph& g, Var row, int m) {
  return g.gather_rows(row, std::vector<int>(static_cast<size_t>(m), 0));
}

void register_lstm(ParamSet& ps, const std::string& prefix, int in_dim, int hidden) {
  ps.create(prefix + ".wx", {in_dim, 4 * hidden});
  ps.create(prefix + ".wh", {hidden, 4 * hidden});
  ps.create(prefix + ".b", {1, 4 * hidden});
}

std::vector<Var> lstm_run(ParamLookup& P, const std::string& prefix, Var embeds, int n,
                          int hidden, bool reverse) {
  Graph& g = P.g;
  Var wx = P(prefix + ".wx");
  Var wh = P(prefix + ".wh");
  Var b = P(prefix + ".b");
  Var h = g.zeros(1, hidden);
  Var c = g.zeros(1, hidden);
  std::vector<Var> states(static_cast<size_t>(n));
  const int cols = g.cols(embeds);
  for (int step = 0; step < n; ++step) {
    const int t = reverse ? n - 1 - step : step;
    Var xt = g.slice(embeds, t, t + 1, 0, cols);
    Var gates = g.add(g.add(g.matmul(xt, wx), g.matmul(h, wh)), b);
    Var in_g = g.sigmoid(g.slice(gates, 0, 1, 0, hidden));
    Var forget_g = g.sigmoid(g.slice(gates, 0, 1, hidden, 2 * hidden));
    Var cand = g.tanh_op(g.slice(gates, 0, 1, 2 * hidden, 3 * hidden));
    Var out_g = g.sigmoid(g.slice(gates, 0, 1, 3 * hidden, 4 * hidden));
    c = g.add(g.mul(forget_g, c), g.mul(in_g, cand));
    h = g.mul(out_g, g.tanh_op(c));
    states[static_cast<size_t>(t)] = h;
  }
  return states;
}

void register_bilstm(ParamSet& ps, const std::string& prefix, int in_dim, int hidden) {
  register_lstm(ps, prefix + ".fwd", in_dim, hidden);
  register_lstm(ps, prefix + ".bwd", in_dim, hidden);
}

Var bilstm_matrix(ParamLookup& P, const std::string& prefix, Var embeds, int n,
                  int hidden) {
  Graph& g = P.g;
  std::vector<Var> fwd = lstm_run(P, prefix + ".fwd", embeds, n, hidden, false);
  std::vector<Var> bwd = lstm_run(P, prefix + ".bwd", embeds, n, hidden, true);
  std::vector<Var> rows(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t)
    rows[static_cast<size_t>(t)] =
        g.concat_cols(fwd[static_cast<size_t>(t)], bwd[static_cast<size_t>(t)]);
  return g.concat_rows(rows);
}

}  // namespace gf
