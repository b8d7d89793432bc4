// Sentence-conditioned grammar: uniform rules at zero parameters, exact KL
// values against the closed form and numeric quadrature, row normalization
// for random latents, and the posterior / sampling / ELBO wiring.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "gf/compound.h"
#include "gf/rng.h"
#include "gf/trainer.h"

using namespace gf;

namespace {

CompoundConfig small_config() {
  CompoundConfig cc;
  cc.sizes = {2, 2, 6};
  cc.z_dim = 3;
  cc.embed_dim = 8;
  cc.enc_embed_dim = 7;
  cc.enc_hidden = 5;
  return cc;
}

}  // namespace

TEST_CASE("zero parameters produce uniform rule distributions") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);  // tensors start zero-filled

  const RuleTensors r = rule_probs(ps, cc, {0.0, 0.0, 0.0});
  const int S = cc.sizes.symbols();
  for (double v : r.root) CHECK(std::abs(std::exp(v) - 1.0 / 2) < 1e-12);
  for (double v : r.binary) CHECK(std::abs(std::exp(v) - 1.0 / (S * S)) < 1e-12);
  for (double v : r.lexical) CHECK(std::abs(std::exp(v) - 1.0 / 6) < 1e-12);
  CHECK(r.max_normalization_error() < 1e-12);
}

TEST_CASE("rule rows normalize for random latents and random parameters") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  init_params(ps, 99);

  Rng rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> z(static_cast<size_t>(cc.z_dim));
    for (double& v : z) v = rng.normal();
    const RuleTensors r = rule_probs(ps, cc, z);
    CHECK(r.max_normalization_error() < 1e-5);
  }
}

TEST_CASE("different latents give different grammars") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  init_params(ps, 7);
  const RuleTensors a = rule_probs(ps, cc, {1.0, 0.0, 0.0});
  const RuleTensors b = rule_probs(ps, cc, {-1.0, 0.5, 0.0});
  double diff = 0.0;
  for (size_t i = 0; i < a.binary.size(); ++i) diff += std::abs(a.binary[i] - b.binary[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("gaussian KL closed form: hand value and quadrature") {
  Graph g;
  // KL(N(1, 1) || N(0, 1)) = (mu^2 + var - logvar - 1) / 2 = 0.5.
  Var kl = kl_gaussian(g, g.constant(1, 1, {1.0}), g.constant(1, 1, {0.0}));
  CHECK(std::abs(g.scalar_value(kl) - 0.5) < 1e-12);

  // Independent check by Simpson quadrature of q log(q/p) for mu = 0.3,
  // logvar = -0.4.
  const double mu = 0.3, logvar = -0.4;
  const double var = std::exp(logvar);
  auto q = [&](double x) {
    return std::exp(-(x - mu) * (x - mu) / (2 * var)) / std::sqrt(2 * M_PI * var);
  };
  auto p = [&](double x) { return std::exp(-x * x / 2) / std::sqrt(2 * M_PI); };
  const int steps = 20000;
  const double lo = -10, hi = 10, h = (hi - lo) / steps;
  double integral = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + h * i;
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double qx = q(x);
    if (qx > 0) integral += w * qx * std::log(qx / p(x));
  }
  integral *= h / 3;

  Graph g2;
  Var kl2 = kl_gaussian(g2, g2.constant(1, 1, {mu}), g2.constant(1, 1, {logvar}));
  CHECK(std::abs(g2.scalar_value(kl2) - integral) < 1e-9);

  // Multi-dimensional KL sums per-coordinate terms.
  Graph g3;
  Var kl3 = kl_gaussian(g3, g3.constant(1, 2, {1.0, 0.3}),
                        g3.constant(1, 2, {0.0, -0.4}));
  CHECK(std::abs(g3.scalar_value(kl3) - (0.5 + integral)) < 1e-9);

  // KL(q || q) = 0.
  Graph g4;
  Var kl4 = kl_gaussian(g4, g4.constant(1, 3, {0, 0, 0}), g4.constant(1, 3, {0, 0, 0}));
  CHECK(std::abs(g4.scalar_value(kl4)) < 1e-12);
}

TEST_CASE("posterior encoder shapes and determinism") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  init_params(ps, 13);

  Graph g;
  PosteriorVars post = encode_posterior(g, ps, cc, {1, 4, 2});
  CHECK(g.rows(post.mu) == 1);
  CHECK(g.cols(post.mu) == cc.z_dim);
  CHECK(g.rows(post.logvar) == 1);
  CHECK(g.cols(post.logvar) == cc.z_dim);

  Graph g2;
  PosteriorVars post2 = encode_posterior(g2, ps, cc, {1, 4, 2});
  CHECK(g.value(post.mu) == g2.value(post2.mu));

  Graph g3;
  PosteriorVars post3 = encode_posterior(g3, ps, cc, {1, 4, 3});
  CHECK(g.value(post.mu) != g3.value(post3.mu));
}

TEST_CASE("forward pass: sampling, posterior mean, and the ELBO identity") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  init_params(ps, 21);
  const std::vector<int> words = {0, 5, 3, 2};

  // Without an RNG the latent is exactly the posterior mean.
  Graph g;
  SentenceForward fwd = compound_forward(g, ps, cc, words, nullptr, false);
  CHECK(g.value(fwd.z) == g.value(fwd.post.mu));

  // -ELBO = -logp + KL, and KL >= 0.
  const double kl = g.scalar_value(fwd.kl);
  CHECK(kl >= 0.0);
  CHECK(std::abs(g.scalar_value(fwd.neg_elbo) -
                 (-g.scalar_value(fwd.chart.logp) + kl)) < 1e-12);

  // With an RNG the sample moves off the mean but reproduces per seed.
  Rng r1(55), r2(55), r3(56);
  Graph gs1, gs2, gs3;
  SentenceForward s1 = compound_forward(gs1, ps, cc, words, &r1, false);
  SentenceForward s2 = compound_forward(gs2, ps, cc, words, &r2, false);
  SentenceForward s3 = compound_forward(gs3, ps, cc, words, &r3, false);
  CHECK(gs1.value(s1.z) != g.value(fwd.z));
  CHECK(gs1.value(s1.z) == gs2.value(s2.z));
  CHECK(gs1.value(s1.z) != gs3.value(s3.z));
}

TEST_CASE("reparameterized samples follow the posterior moments") {
  // z = mu + exp(logvar / 2) * eps: over many draws the sample mean and
  // variance must approach mu and exp(logvar).
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  init_params(ps, 34);
  const std::vector<int> words = {2, 1, 0};

  Graph gm;
  SentenceForward mean_fwd = compound_forward(gm, ps, cc, words, nullptr, false);
  const std::vector<double> mu = gm.value(mean_fwd.post.mu);
  const std::vector<double> logvar = gm.value(mean_fwd.post.logvar);

  const int draws = 4000;
  std::vector<double> acc(mu.size(), 0.0), acc2(mu.size(), 0.0);
  Rng rng(77);
  for (int d = 0; d < draws; ++d) {
    Graph g;
    SentenceForward f = compound_forward(g, ps, cc, words, &rng, false);
    const std::vector<double>& z = g.value(f.z);
    for (size_t i = 0; i < z.size(); ++i) {
      acc[i] += z[i];
      acc2[i] += z[i] * z[i];
    }
  }
  for (size_t i = 0; i < mu.size(); ++i) {
    const double m = acc[i] / draws;
    const double v = acc2[i] / draws - m * m;
    CHECK(std::abs(m - mu[i]) < 0.05);
    CHECK(std::abs(v - std::exp(logvar[i])) < 0.05 * std::max(1.0, std::exp(logvar[i])));
  }
}

TEST_CASE("compound parameters register in a stable order") {
  const CompoundConfig cc = small_config();
  ParamSet ps;
  register_compound_params(cc, ps);
  const std::vector<std::string>& names = ps.names();
  REQUIRE(names.size() >= 4);
  CHECK(names[0] == "grammar.w_root");
  CHECK(names[1] == "grammar.w_nt");
  CHECK(names[2] == "grammar.w_pt");
  CHECK(names.back() == "enc.head.b");
  for (const std::string& n : names)
    CHECK((n.rfind("grammar.", 0) == 0 || n.rfind("enc.", 0) == 0));
}
