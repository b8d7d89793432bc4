#include "gf/fdcheck.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "gf/common.h"
#include "gf/rng.h"

namespace gf {

std::string FdReport::summary() const {
  return strcat_msg("fd-check: ", entries_checked, " entries, max rel err ",
                    max_rel_err, " at ", worst_param, "[", worst_index,
                    "] (analytic ", worst_analytic, ", numeric ", worst_numeric, ")");
}

FdReport finite_difference_check(ParamSet& params,
                                 const std::function<Var(Graph&)>& build,
                                 double step, int max_entries_per_tensor,
                                 uint64_t select_seed, double denom_floor) {
  // Analytic pass.
  std::unordered_map<std::string, std::vector<double>> analytic;
  {
    Graph g(false);
    Var loss = build(g);
    g.backward(loss);
    for (const auto& pg : g.param_grads()) {
      auto& acc = analytic[pg.name];
      if (acc.empty()) acc.assign(params.get(pg.name).data.size(), 0.0);
      if (!pg.grad->empty())
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*pg.grad)[i];
    }
  }

  auto forward = [&]() {
    Graph g(false);
    Var loss = build(g);
    return g.scalar_value(loss);
  };

  FdReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const std::string& name = params.names()[pi];
    auto it = analytic.find(name);
    if (it == analytic.end()) continue;  // not part of this loss
    Tensor& t = params.at(pi);
    const int64_t n = t.numel();

    std::vector<int64_t> picks;
    if (max_entries_per_tensor <= 0 || n <= max_entries_per_tensor) {
      picks.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) picks[static_cast<size_t>(i)] = i;
    } else {
      Rng rng(derive_seed(select_seed, pi));
      for (int k = 0; k < max_entries_per_tensor; ++k)
        picks.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }

    for (int64_t i : picks) {
      const float orig = t.data[static_cast<size_t>(i)];
      t.data[static_cast<size_t>(i)] = orig + static_cast<float>(step);
      const double xp = static_cast<double>(t.data[static_cast<size_t>(i)]);
      const double fp = forward();
      t.data[static_cast<size_t>(i)] = orig - static_cast<float>(step);
      const double xm = static_cast<double>(t.data[static_cast<size_t>(i)]);
      const double fm = forward();
      t.data[static_cast<size_t>(i)] = orig;
      check(xp != xm, "fd-check: zero effective step at ", name, "[", i, "]");
      const double fd = (fp - fm) / (xp - xm);
      const double a = it->second[static_cast<size_t>(i)];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), denom_floor});
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = static_cast<int>(i);
        report.worst_analytic = a;
        report.worst_numeric = fd;
      }
    }
  }
  return report;
}

}  // namespace gf
