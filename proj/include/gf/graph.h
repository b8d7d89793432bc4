#pragma once

// Reverse-mode automatic differentiation over dense 2-D values.
//
// A Graph is a per-example tape: leaves reference float32 parameter tensors,
// every operation appends a node holding its float64 value and a backward
// closure, and backward() sweeps the tape in reverse.  Values and adjoints
// are kept in float64 so that finite-difference oracles with step 1e-3 are
// meaningful; parameters themselves stay float32 (see tensor.h).
//
// Gradients are accumulated per graph, never into the shared parameter
// tensors, so sentence-level graphs can run on worker threads and be merged
// deterministically afterwards.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gf/rng.h"
#include "gf/tensor.h"

namespace gf {

struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

class Graph {
 public:
  explicit Graph(bool training = false, uint64_t dropout_seed = 0)
      : training_(training), rng_(dropout_seed) {}

  bool training() const { return training_; }

  // ---- leaves ----
  // Promotes a float32 tensor to a float64 leaf.  If `param_name` is
  // non-empty the leaf is trainable and its gradient is exported after
  // backward() under that name.
  Var input(const Tensor& t, const std::string& param_name = "");
  Var param(const ParamSet& ps, const std::string& name) {
    return input(ps.get(name), name);
  }
  Var constant(int rows, int cols, std::vector<double> vals);
  Var scalar(double v) { return constant(1, 1, {v}); }
  Var zeros(int rows, int cols) {
    return constant(rows, cols, std::vector<double>(size_t(rows) * cols, 0.0));
  }

  // ---- primitives ----
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);  // same shape, or b a [1,c] row vector added to every row
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise, same shape
  Var div(Var a, Var b);  // elementwise, same shape
  Var mul_colvec(Var a, Var v);  // a[m,c] scaled per row by v[m,1]
  Var add_scalar(Var a, double s);
  Var mul_scalar(Var a, double s);
  Var concat_cols(Var a, Var b);
  Var concat_rows(const std::vector<Var>& parts);
  Var reshape(Var a, int rows, int cols);
  Var transpose(Var a);
  // y_ij = a_ij / (Σ_j a_ij + eps): rows rescaled to sum to ~1
  Var normalize_rows_sum(Var a, double eps = 1e-30);
  Var slice(Var a, int r0, int r1, int c0, int c1);  // half-open bounds
  Var gather_rows(Var table, std::vector<int> ids);
  Var mean_rows(Var a);  // [m,c] -> [1,c]
  Var max_rows(Var a);   // [m,c] -> [1,c], column-wise max
  Var sum_all(Var a);    // -> [1,1]
  Var mean_all(Var a);   // -> [1,1]
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var logsumexp_rows(Var a);  // [m,c] -> [m,1]
  Var sigmoid(Var a);
  Var tanh_op(Var a);
  Var relu(Var a);
  Var exp_op(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias);
  Var dropout(Var x, double p);
  Var l2_normalize_rows(Var x);
  Var cosine_rows(Var a, Var b);  // [m,c] x [m,c] (or b [1,c]) -> [m,1]

  // Raw node for fused operations (the chart kernels use this).  `back`
  // receives the graph and the node id; it must add into parent grads.
  Var custom(int rows, int cols, std::vector<double> value, std::vector<Var> parents,
             std::function<void(Graph&, int)> back);

  // ---- execution ----
  void backward(Var loss);  // loss must be [1,1]

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  const std::vector<double>& value(Var v) const { return nodes_[v.id].val; }
  double scalar_value(Var v) const;
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
  std::vector<double>& grad_mut(Var v) { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Trainable-leaf gradients accumulated by the last backward(), in leaf
  // creation order.  Empty grad vector means the leaf was never touched.
  struct ParamGrad {
    std::string name;
    const std::vector<double>* grad;
  };
  std::vector<ParamGrad> param_grads() const;

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Graph&, int)> back;
    bool needs_grad = false;
    std::string param_name;  // non-empty for trainable leaves
  };

  Var push(int rows, int cols, bool needs_grad);
  std::vector<double>& val_mut(Var v) { return nodes_[v.id].val; }
  void ensure_grad(int id);
  static void check_same_shape(const Graph& g, Var a, Var b, const char* op);

  std::vector<Node> nodes_;
  std::vector<int> trainable_leaves_;
  bool training_ = false;
  Rng rng_;
};

}  // namespace gf
