#pragma once

// Central finite-difference oracle for gradients.  The loss builder is run
// on fresh graphs (eval mode, so no dropout); parameters are perturbed in
// their float32 storage and the effective step is read back, which removes
// quantization error from the step itself.

#include <functional>
#include <string>

#include "gf/graph.h"
#include "gf/tensor.h"

namespace gf {

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int entries_checked = 0;
  bool ok(double tol) const { return entries_checked > 0 && max_rel_err <= tol; }
  std::string summary() const;
};

// build must bind parameters through g.param(params, name) and return the
// scalar loss node.  max_entries_per_tensor = 0 checks every entry; otherwise
// a seeded subset is drawn per tensor.  rel err uses a denominator floor so
// near-zero gradients are compared absolutely.
FdReport finite_difference_check(ParamSet& params,
                                 const std::function<Var(Graph&)>& build,
                                 double step = 1e-3,
                                 int max_entries_per_tensor = 0,
                                 uint64_t select_seed = 0,
                                 double denom_floor = 1e-2);

}  // namespace gf
