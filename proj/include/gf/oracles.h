#pragma once

// Self-checking suites used by the `oracle-check` command and the acceptance
// harness.  The chart suite rebuilds every chart quantity from explicit tree
// enumeration in probability space (no shared code with the log-space
// dynamic programs beyond the bracketing generator); the gradient suite
// compares analytic gradients of each loss against central finite
// differences.

#include <cstdint>
#include <string>
#include <vector>

namespace gf {

struct OracleCheck {
  std::string name;
  bool pass = false;
  double worst = 0.0;      // largest deviation observed
  double tolerance = 0.0;
  std::string detail;      // instance description for the worst deviation
};

// Random (grammar, sentence) instances with 2 <= n <= 8: inside log-mass,
// Viterbi best score, and span-label posteriors against enumeration.
std::vector<OracleCheck> chart_oracle_suite(uint64_t seed, int instances = 200);

// Finite-difference checks on toy instances of every trainable loss: the
// ELBO, the single-expert and fused matching losses, a fused-stack readout,
// and a marginal-weighted chart loss.
std::vector<OracleCheck> gradient_oracle_suite(uint64_t seed);

bool all_pass(const std::vector<OracleCheck>& checks);
std::string oracle_report(const std::vector<OracleCheck>& checks);

}  // namespace gf
