#include "gf/graph.h"

#include <algorithm>
#include <cmath>

#include "gf/common.h"

namespace gf {

static constexpr double kNormEps = 1e-8;
static constexpr double kLayerNormEps = 1e-5;

Var Graph::push(int rows, int cols, bool needs_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
}

void Graph::check_same_shape(const Graph& g, Var a, Var b, const char* op) {
  check(g.rows(a) == g.rows(b) && g.cols(a) == g.cols(b), op,
        ": shape mismatch [", g.rows(a), ",", g.cols(a), "] vs [", g.rows(b), ",",
        g.cols(b), "]");
}

double Graph::scalar_value(Var v) const {
  check(rows(v) == 1 && cols(v) == 1, "scalar_value: node is not [1,1]");
  return nodes_[v.id].val[0];
}

Var Graph::input(const Tensor& t, const std::string& param_name) {
  Var v = push(t.rows(), t.cols(), !param_name.empty());
  Node& n = nodes_[v.id];
  for (size_t i = 0; i < t.data.size(); ++i) n.val[i] = static_cast<double>(t.data[i]);
  n.param_name = param_name;
  if (!param_name.empty()) trainable_leaves_.push_back(v.id);
  return v;
}

Var Graph::constant(int rows, int cols, std::vector<double> vals) {
  check(static_cast<size_t>(rows) * cols == vals.size(), "constant: size mismatch");
  Var v = push(rows, cols, false);
  nodes_[v.id].val = std::move(vals);
  return v;
}

std::vector<Graph::ParamGrad> Graph::param_grads() const {
  std::vector<ParamGrad> out;
  out.reserve(trainable_leaves_.size());
  for (int id : trainable_leaves_)
    out.push_back({nodes_[id].param_name, &nodes_[id].grad});
  return out;
}

void Graph::backward(Var loss) {
  check(loss.ok() && rows(loss) == 1 && cols(loss) == 1,
        "backward: loss must be a [1,1] node");
  check(std::isfinite(nodes_[loss.id].val[0]), "backward: loss is not finite");
  ensure_grad(loss.id);
  nodes_[loss.id].grad[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
}

Var Graph::matmul(Var a, Var b) {
  const int m = rows(a), k = cols(a), k2 = rows(b), n = cols(b);
  check(k == k2, "matmul: inner dims differ (", k, " vs ", k2, ")");
  Var out = push(m, n, needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[size_t(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[size_t(p) * n];
      double* orow = &ov[size_t(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid, m, k, n](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    const auto& av = g.nodes_[aid].val;
    const auto& bv = g.nodes_[bid].val;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double* brow = &bv[size_t(p) * n];
          const double* grow = &gv[size_t(i) * n];
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[size_t(i) * k + p] += acc;
        }
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double aip = av[size_t(i) * k + p];
          if (aip == 0.0) continue;
          const double* grow = &gv[size_t(i) * n];
          double* gbrow = &gb[size_t(p) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  };
  return out;
}

Var Graph::add(Var a, Var b) {
  const bool bias = rows(b) == 1 && rows(a) != 1;
  if (!bias) check_same_shape(*this, a, b, "add");
  else check(cols(a) == cols(b), "add: bias width mismatch");
  const int m = rows(a), c = cols(a);
  Var out = push(m, c, needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j)
      ov[size_t(i) * c + j] = av[size_t(i) * c + j] + bv[bias ? j : size_t(i) * c + j];
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid, m, c, bias](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      if (bias) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j) gb[j] += gv[size_t(i) * c + j];
      } else {
        for (size_t i = 0; i < gv.size(); ++i) gb[i] += gv[i];
      }
    }
  };
  return out;
}

Var Graph::sub(Var a, Var b) {
  check_same_shape(*this, a, b, "sub");
  Var out = push(rows(a), cols(a), needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (size_t i = 0; i < gv.size(); ++i) gb[i] -= gv[i];
    }
  };
  return out;
}

Var Graph::mul(Var a, Var b) {
  check_same_shape(*this, a, b, "mul");
  Var out = push(rows(a), cols(a), needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    const auto& av = g.nodes_[aid].val;
    const auto& bv = g.nodes_[bid].val;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * bv[i];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (size_t i = 0; i < gv.size(); ++i) gb[i] += gv[i] * av[i];
    }
  };
  return out;
}

Var Graph::div(Var a, Var b) {
  check_same_shape(*this, a, b, "div");
  Var out = push(rows(a), cols(a), needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    const auto& av = g.nodes_[aid].val;
    const auto& bv = g.nodes_[bid].val;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] / bv[i];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (size_t i = 0; i < gv.size(); ++i) gb[i] -= gv[i] * av[i] / (bv[i] * bv[i]);
    }
  };
  return out;
}

Var Graph::mul_colvec(Var a, Var v) {
  const int m = rows(a), c = cols(a);
  check(rows(v) == m && cols(v) == 1, "mul_colvec: v must be [rows(a),1]");
  Var out = push(m, c, needs_grad(a) || needs_grad(v));
  const auto& av = value(a);
  const auto& vv = value(v);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) ov[size_t(i) * c + j] = av[size_t(i) * c + j] * vv[i];
  const int aid = a.id, vid = v.id;
  nodes_[out.id].back = [aid, vid, m, c](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    const auto& av = g.nodes_[aid].val;
    const auto& vv = g.nodes_[vid].val;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += gv[size_t(i) * c + j] * vv[i];
    }
    if (g.nodes_[vid].needs_grad) {
      g.ensure_grad(vid);
      auto& gvv = g.nodes_[vid].grad;
      for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += gv[size_t(i) * c + j] * av[size_t(i) * c + j];
        gvv[i] += acc;
      }
    }
  };
  return out;
}

Var Graph::add_scalar(Var a, double s) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
  };
  return out;
}

Var Graph::mul_scalar(Var a, double s) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  const int aid = a.id;
  nodes_[out.id].back = [aid, s](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * s;
  };
  return out;
}

Var Graph::concat_cols(Var a, Var b) {
  const int m = rows(a), ca = cols(a), cb = cols(b);
  check(rows(b) == m, "concat_cols: row mismatch");
  Var out = push(m, ca + cb, needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i) {
    std::copy_n(&av[size_t(i) * ca], ca, &ov[size_t(i) * (ca + cb)]);
    std::copy_n(&bv[size_t(i) * cb], cb, &ov[size_t(i) * (ca + cb) + ca]);
  }
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid, m, ca, cb](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    if (g.nodes_[aid].needs_grad) {
      g.ensure_grad(aid);
      auto& ga = g.nodes_[aid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < ca; ++j) ga[size_t(i) * ca + j] += gv[size_t(i) * (ca + cb) + j];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < cb; ++j)
          gb[size_t(i) * cb + j] += gv[size_t(i) * (ca + cb) + ca + j];
    }
  };
  return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows: no parts");
  const int c = cols(parts[0]);
  int m = 0;
  bool ng = false;
  for (Var p : parts) {
    check(cols(p) == c, "concat_rows: column mismatch");
    m += rows(p);
    ng = ng || needs_grad(p);
  }
  Var out = push(m, c, ng);
  auto& ov = val_mut(out);
  size_t off = 0;
  std::vector<int> ids;
  std::vector<int> rows_of;
  for (Var p : parts) {
    const auto& pv = value(p);
    std::copy(pv.begin(), pv.end(), ov.begin() + off);
    off += pv.size();
    ids.push_back(p.id);
    rows_of.push_back(rows(p));
  }
  nodes_[out.id].back = [ids, rows_of, c](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    size_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      const size_t n = static_cast<size_t>(rows_of[k]) * c;
      if (g.nodes_[ids[k]].needs_grad) {
        g.ensure_grad(ids[k]);
        auto& gp = g.nodes_[ids[k]].grad;
        for (size_t i = 0; i < n; ++i) gp[i] += gv[off + i];
      }
      off += n;
    }
  };
  return out;
}

Var Graph::reshape(Var a, int r, int c) {
  check(static_cast<size_t>(r) * c == value(a).size(), "reshape: element count mismatch");
  Var out = push(r, c, needs_grad(a));
  val_mut(out) = value(a);
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
  };
  return out;
}

Var Graph::transpose(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(c, m, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) ov[size_t(j) * m + i] = av[size_t(i) * c + j];
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += gv[size_t(j) * m + i];
  };
  return out;
}

Var Graph::normalize_rows_sum(Var a, double eps) {
  const int m = rows(a), c = cols(a);
  Var out = push(m, c, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  std::vector<double> denom(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = eps;
    for (int j = 0; j < c; ++j) s += av[size_t(i) * c + j];
    denom[static_cast<size_t>(i)] = s;
    for (int j = 0; j < c; ++j) ov[size_t(i) * c + j] = av[size_t(i) * c + j] / s;
  }
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c, denom = std::move(denom)](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov2 = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gv[size_t(i) * c + j] * ov2[size_t(i) * c + j];
      for (int j = 0; j < c; ++j)
        ga[size_t(i) * c + j] += (gv[size_t(i) * c + j] - dot) / denom[static_cast<size_t>(i)];
    }
  };
  return out;
}

Var Graph::slice(Var a, int r0, int r1, int c0, int c1) {
  const int m = rows(a), c = cols(a);
  check(0 <= r0 && r0 < r1 && r1 <= m && 0 <= c0 && c0 < c1 && c1 <= c,
        "slice: bounds [", r0, ",", r1, ")x[", c0, ",", c1, ") outside [", m, ",", c, "]");
  const int sr = r1 - r0, sc = c1 - c0;
  Var out = push(sr, sc, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < sr; ++i)
    for (int j = 0; j < sc; ++j)
      ov[size_t(i) * sc + j] = av[size_t(i + r0) * c + (j + c0)];
  const int aid = a.id;
  nodes_[out.id].back = [aid, r0, c0, sr, sc, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < sr; ++i)
      for (int j = 0; j < sc; ++j)
        ga[size_t(i + r0) * c + (j + c0)] += gv[size_t(i) * sc + j];
  };
  return out;
}

Var Graph::gather_rows(Var table, std::vector<int> ids) {
  const int v = rows(table), d = cols(table);
  for (int id : ids)
    check(0 <= id && id < v, "gather_rows: index ", id, " outside table of ", v, " rows");
  Var out = push(static_cast<int>(ids.size()), d, needs_grad(table));
  const auto& tv = value(table);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(&tv[size_t(ids[i]) * d], d, &ov[i * d]);
  const int tid = table.id;
  nodes_[out.id].back = [tid, ids, d](Graph& g, int self) {
    if (!g.nodes_[tid].needs_grad) return;
    g.ensure_grad(tid);
    const auto& gv = g.nodes_[self].grad;
    auto& gt = g.nodes_[tid].grad;
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j) gt[size_t(ids[i]) * d + j] += gv[i * d + j];
  };
  return out;
}

Var Graph::mean_rows(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(1, c, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) ov[j] += av[size_t(i) * c + j];
  for (int j = 0; j < c; ++j) ov[j] /= m;
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += gv[j] / m;
  };
  return out;
}

Var Graph::max_rows(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(1, c, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  std::vector<int> arg(c, 0);
  for (int j = 0; j < c; ++j) {
    double best = av[j];
    for (int i = 1; i < m; ++i) {
      const double x = av[size_t(i) * c + j];
      if (x > best) {
        best = x;
        arg[j] = i;
      }
    }
    ov[j] = best;
  }
  const int aid = a.id;
  nodes_[out.id].back = [aid, arg, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    auto& ga = g.nodes_[aid].grad;
    for (int j = 0; j < c; ++j) ga[size_t(arg[j]) * c + j] += gv[j];
  };
  return out;
}

Var Graph::sum_all(Var a) {
  Var out = push(1, 1, needs_grad(a));
  const auto& av = value(a);
  double acc = 0.0;
  for (double x : av) acc += x;
  val_mut(out)[0] = acc;
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const double gv = g.nodes_[self].grad[0];
    for (auto& x : g.nodes_[aid].grad) x += gv;
  };
  return out;
}

Var Graph::mean_all(Var a) {
  return mul_scalar(sum_all(a), 1.0 / (static_cast<double>(rows(a)) * cols(a)));
}

Var Graph::softmax_rows(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(m, c, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i) {
    const double* x = &av[size_t(i) * c];
    double* y = &ov[size_t(i) * c];
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= z;
  }
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i) {
      const double* gr = &gv[size_t(i) * c];
      const double* s = &ov[size_t(i) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gr[j] * s[j];
      for (int j = 0; j < c; ++j) ga[size_t(i) * c + j] += s[j] * (gr[j] - dot);
    }
  };
  return out;
}

Var Graph::log_softmax_rows(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(m, c, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i) {
    const double* x = &av[size_t(i) * c];
    double* y = &ov[size_t(i) * c];
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i) {
      const double* gr = &gv[size_t(i) * c];
      const double* y = &ov[size_t(i) * c];
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += gr[j];
      for (int j = 0; j < c; ++j)
        ga[size_t(i) * c + j] += gr[j] - std::exp(y[j]) * gsum;
    }
  };
  return out;
}

Var Graph::logsumexp_rows(Var a) {
  const int m = rows(a), c = cols(a);
  Var out = push(m, 1, needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i) {
    const double* x = &av[size_t(i) * c];
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) {
      ov[i] = mx;  // all -inf stays -inf
      continue;
    }
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    ov[i] = mx + std::log(z);
  }
  const int aid = a.id;
  nodes_[out.id].back = [aid, m, c](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    const auto& av = g.nodes_[aid].val;
    auto& ga = g.nodes_[aid].grad;
    for (int i = 0; i < m; ++i) {
      if (!std::isfinite(ov[i])) continue;
      for (int j = 0; j < c; ++j)
        ga[size_t(i) * c + j] += gv[i] * std::exp(av[size_t(i) * c + j] - ov[i]);
    }
  };
  return out;
}

Var Graph::sigmoid(Var a) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-av[i]));
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * ov[i] * (1.0 - ov[i]);
  };
  return out;
}

Var Graph::tanh_op(Var a) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(av[i]);
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * (1.0 - ov[i] * ov[i]);
  };
  return out;
}

Var Graph::relu(Var a) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& av = g.nodes_[aid].val;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i)
      if (av[i] > 0.0) ga[i] += gv[i];
  };
  return out;
}

Var Graph::exp_op(Var a) {
  Var out = push(rows(a), cols(a), needs_grad(a));
  const auto& av = value(a);
  auto& ov = val_mut(out);
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  const int aid = a.id;
  nodes_[out.id].back = [aid](Graph& g, int self) {
    if (!g.nodes_[aid].needs_grad) return;
    g.ensure_grad(aid);
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    auto& ga = g.nodes_[aid].grad;
    for (size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i] * ov[i];
  };
  return out;
}

Var Graph::layer_norm_rows(Var x, Var gain, Var bias) {
  const int m = rows(x), c = cols(x);
  check(rows(gain) == 1 && cols(gain) == c, "layer_norm: gain must be [1,c]");
  check(rows(bias) == 1 && cols(bias) == c, "layer_norm: bias must be [1,c]");
  Var out = push(m, c, needs_grad(x) || needs_grad(gain) || needs_grad(bias));
  const auto& xv = value(x);
  const auto& gv_ = value(gain);
  const auto& bv = value(bias);
  auto& ov = val_mut(out);
  std::vector<double> xhat(size_t(m) * c);
  std::vector<double> inv_sd(m);
  for (int i = 0; i < m; ++i) {
    const double* xr = &xv[size_t(i) * c];
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += xr[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= c;
    const double isd = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_sd[i] = isd;
    for (int j = 0; j < c; ++j) {
      const double xh = (xr[j] - mu) * isd;
      xhat[size_t(i) * c + j] = xh;
      ov[size_t(i) * c + j] = gv_[j] * xh + bv[j];
    }
  }
  const int xid = x.id, gid = gain.id, bid = bias.id;
  nodes_[out.id].back = [xid, gid, bid, m, c, xhat, inv_sd](Graph& g, int self) {
    const auto& go = g.nodes_[self].grad;
    const auto& gainv = g.nodes_[gid].val;
    if (g.nodes_[gid].needs_grad) {
      g.ensure_grad(gid);
      auto& gg = g.nodes_[gid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) gg[j] += go[size_t(i) * c + j] * xhat[size_t(i) * c + j];
    }
    if (g.nodes_[bid].needs_grad) {
      g.ensure_grad(bid);
      auto& gb = g.nodes_[bid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) gb[j] += go[size_t(i) * c + j];
    }
    if (g.nodes_[xid].needs_grad) {
      g.ensure_grad(xid);
      auto& gx = g.nodes_[xid].grad;
      for (int i = 0; i < m; ++i) {
        double mean_gy = 0.0, mean_gyxh = 0.0;
        for (int j = 0; j < c; ++j) {
          const double gy = go[size_t(i) * c + j] * gainv[j];
          mean_gy += gy;
          mean_gyxh += gy * xhat[size_t(i) * c + j];
        }
        mean_gy /= c;
        mean_gyxh /= c;
        for (int j = 0; j < c; ++j) {
          const double gy = go[size_t(i) * c + j] * gainv[j];
          gx[size_t(i) * c + j] +=
              inv_sd[i] * (gy - mean_gy - xhat[size_t(i) * c + j] * mean_gyxh);
        }
      }
    }
  };
  return out;
}

Var Graph::dropout(Var x, double p) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (!training_ || p == 0.0) return x;
  const int m = rows(x), c = cols(x);
  Var out = push(m, c, needs_grad(x));
  const auto& xv = value(x);
  auto& ov = val_mut(out);
  std::vector<double> mask(xv.size());
  const double scale = 1.0 / (1.0 - p);
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng_.uniform() < p ? 0.0 : scale;
    ov[i] = xv[i] * mask[i];
  }
  const int xid = x.id;
  nodes_[out.id].back = [xid, mask](Graph& g, int self) {
    if (!g.nodes_[xid].needs_grad) return;
    g.ensure_grad(xid);
    const auto& gv = g.nodes_[self].grad;
    auto& gx = g.nodes_[xid].grad;
    for (size_t i = 0; i < gv.size(); ++i) gx[i] += gv[i] * mask[i];
  };
  return out;
}

Var Graph::l2_normalize_rows(Var x) {
  const int m = rows(x), c = cols(x);
  Var out = push(m, c, needs_grad(x));
  const auto& xv = value(x);
  auto& ov = val_mut(out);
  std::vector<double> norm(m);
  for (int i = 0; i < m; ++i) {
    const double* xr = &xv[size_t(i) * c];
    double n2 = 0.0;
    for (int j = 0; j < c; ++j) n2 += xr[j] * xr[j];
    norm[i] = std::sqrt(n2);
    const double denom = norm[i] + kNormEps;
    for (int j = 0; j < c; ++j) ov[size_t(i) * c + j] = xr[j] / denom;
  }
  const int xid = x.id;
  nodes_[out.id].back = [xid, m, c, norm](Graph& g, int self) {
    if (!g.nodes_[xid].needs_grad) return;
    g.ensure_grad(xid);
    const auto& gv = g.nodes_[self].grad;
    const auto& xv = g.nodes_[xid].val;
    auto& gx = g.nodes_[xid].grad;
    for (int i = 0; i < m; ++i) {
      const double n = norm[i];
      const double denom = n + kNormEps;
      const double* xr = &xv[size_t(i) * c];
      const double* gr = &gv[size_t(i) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gr[j] * xr[j];
      for (int j = 0; j < c; ++j) {
        double d = gr[j] / denom;
        if (n > 1e-300) d -= xr[j] * dot / (n * denom * denom);
        gx[size_t(i) * c + j] += d;
      }
    }
  };
  return out;
}

Var Graph::cosine_rows(Var a, Var b) {
  const int m = rows(a), c = cols(a);
  const bool bcast = rows(b) == 1 && m != 1;
  if (!bcast) check_same_shape(*this, a, b, "cosine_rows");
  else check(cols(b) == c, "cosine_rows: width mismatch");
  Var out = push(m, 1, needs_grad(a) || needs_grad(b));
  const auto& av = value(a);
  const auto& bv = value(b);
  auto& ov = val_mut(out);
  for (int i = 0; i < m; ++i) {
    const double* ar = &av[size_t(i) * c];
    const double* br = &bv[size_t(bcast ? 0 : i) * c];
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (int j = 0; j < c; ++j) {
      na += ar[j] * ar[j];
      nb += br[j] * br[j];
      dot += ar[j] * br[j];
    }
    ov[i] = dot / ((std::sqrt(na) + kNormEps) * (std::sqrt(nb) + kNormEps));
  }
  const int aid = a.id, bid = b.id;
  nodes_[out.id].back = [aid, bid, m, c, bcast](Graph& g, int self) {
    const auto& gv = g.nodes_[self].grad;
    const auto& ov = g.nodes_[self].val;
    const auto& av = g.nodes_[aid].val;
    const auto& bv = g.nodes_[bid].val;
    const bool need_a = g.nodes_[aid].needs_grad;
    const bool need_b = g.nodes_[bid].needs_grad;
    if (need_a) g.ensure_grad(aid);
    if (need_b) g.ensure_grad(bid);
    for (int i = 0; i < m; ++i) {
      if (gv[i] == 0.0) continue;
      const double* ar = &av[size_t(i) * c];
      const double* br = &bv[size_t(bcast ? 0 : i) * c];
      double na2 = 0.0, nb2 = 0.0;
      for (int j = 0; j < c; ++j) {
        na2 += ar[j] * ar[j];
        nb2 += br[j] * br[j];
      }
      const double na = std::sqrt(na2), nb = std::sqrt(nb2);
      const double da = na + kNormEps, db = nb + kNormEps;
      const double cosv = ov[i];
      if (need_a) {
        auto& ga = g.nodes_[aid].grad;
        for (int j = 0; j < c; ++j) {
          double d = br[j] / (da * db);
          if (na > 1e-300) d -= cosv * ar[j] / (na * da);
          ga[size_t(i) * c + j] += gv[i] * d;
        }
      }
      if (need_b) {
        auto& gb = g.nodes_[bid].grad;
        for (int j = 0; j < c; ++j) {
          double d = ar[j] / (da * db);
          if (nb > 1e-300) d -= cosv * br[j] / (nb * db);
          gb[size_t(bcast ? 0 : i) * c + j] += gv[i] * d;
        }
      }
    }
  };
  return out;
}

Var Graph::custom(int rows, int cols, std::vector<double> value, std::vector<Var> parents,
                  std::function<void(Graph&, int)> back) {
  bool ng = false;
  for (Var p : parents) ng = ng || needs_grad(p);
  Var out = push(rows, cols, ng);
  check(val_mut(out).size() == value.size(), "custom: value size mismatch");
  val_mut(out) = std::move(value);
  nodes_[out.id].back = std::move(back);
  return out;
}

}  // namespace gf
