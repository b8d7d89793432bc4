#pragma once

// Small reusable graph-building blocks: parameter leaf memoization, residual
// MLPs, and LSTM/BiLSTM encoders.

#include <string>
#include <unordered_map>
#include <vector>

#include "gf/graph.h"
#include "gf/tensor.h"

namespace gf {

// Memoizes parameter leaves so weights shared across timesteps or spans
// appear exactly once per graph.
struct ParamLookup {
  Graph& g;
  const ParamSet& ps;
  std::unordered_map<std::string, Var> cache;

  ParamLookup(Graph& graph, const ParamSet& params) : g(graph), ps(params) {}
  Var operator()(const std::string& name);
};

// Input linear followed by two residual ReLU blocks, all of width `dim`.
void register_res_mlp(ParamSet& ps, const std::string& prefix, int in_dim, int dim);
Var res_mlp(ParamLookup& P, const std::string& prefix, Var x);

// Repeats a [1, d] row vector m times.
Var tile_rows(Graph& g, Var row, int m);

// Single-direction LSTM with gate layout [input, forget, cell, output].
void register_lstm(ParamSet& ps, const std::string& prefix, int in_dim, int hidden);
std::vector<Var> lstm_run(ParamLookup& P, const std::string& prefix, Var embeds, int n,
                          int hidden, bool reverse);

// Both directions over `embeds` [n, e], concatenated per position -> [n, 2h].
void register_bilstm(ParamSet& ps, const std::string& prefix, int in_dim, int hidden);
Var bilstm_matrix(ParamLookup& P, const std::string& prefix, Var embeds, int n, int hidden);

}  // namespace gf
