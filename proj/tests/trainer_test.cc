// Optimizer and training-loop behavior: initialization statistics, gradient
// clipping, the Adam update against a double-precision mirror, expert subset
// selection, checkpoint round trips, and small deterministic end-to-end runs
// for every model variant.

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gf/checkpoint.h"
#include "gf/common.h"
#include "gf/dataio.h"
#include "gf/model.h"
#include "gf/trainer.h"

using namespace gf;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const std::string& name) {
  fs::path dir = fs::path(GF_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model(Variant v, int vocab, const std::vector<ExpertSpec>& experts) {
  ModelConfig mc;
  mc.variant = v;
  mc.compound.sizes = {2, 3, 0};
  mc.compound.z_dim = 2;
  mc.compound.embed_dim = 6;
  mc.compound.enc_embed_dim = 5;
  mc.compound.enc_hidden = 4;
  mc.match.embed_dim = 6;
  mc.match.hidden = 4;
  mc.match.span_dim = 5;
  mc.match.joint_dim = 6;
  mc.match.margin = 0.2;
  mc.fusion.joint_dim = 6;
  mc.fusion.layers = 1;
  mc.fusion.ffn_dim = 8;
  mc.fusion.heads = 2;
  mc.fusion.dropout = 0.0;
  mc.fusion.chunks = 2;
  mc.finalize(vocab, experts);
  return mc;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.lr = 0.02;
  tc.batch = 6;
  tc.epochs = 2;
  tc.max_len = 20;
  return tc;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.data.size() != b.data.size()) return false;
  for (size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (size_t k = 0; k < a.size(); ++k) {
    if (a.names()[k] != b.names()[k]) return false;
    if (!same_bits(a.at(k), b.at(k))) return false;
  }
  return true;
}

const Tensor& named(const ParamSet& ps, const std::string& name) {
  for (size_t k = 0; k < ps.size(); ++k)
    if (ps.names()[k] == name) return ps.at(k);
  REQUIRE_MESSAGE(false, "missing parameter " << name);
  return ps.at(0);
}

Vocab full_vocab(const std::vector<CorpusEntry>& entries) {
  std::vector<int> idx(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) idx[i] = static_cast<int>(i);
  return build_vocab(entries, idx);
}

}  // namespace

TEST_CASE("initialization stays inside the Xavier bound with matching variance") {
  ParamSet ps;
  ps.create("enc.w", {100, 100});
  init_params(ps, 7);
  const Tensor& w = named(ps, "enc.w");
  const double bound = std::sqrt(6.0 / 200.0);

  double sum = 0.0, sq = 0.0;
  for (float x : w.data) {
    CHECK(std::abs(x) <= bound);
    sum += x;
    sq += static_cast<double>(x) * x;
  }
  const double n = static_cast<double>(w.data.size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  // Uniform(-b, b) has mean 0 and variance b^2/3 = 2/(fan_in + fan_out).
  CHECK(std::abs(mean) < 0.005);
  CHECK(var == doctest::Approx(bound * bound / 3.0).epsilon(0.05));
}

TEST_CASE("initialization zeroes biases and sets norm gains to one") {
  ParamSet ps;
  ps.create("f.w", {3, 4});
  ps.create("f.b", {1, 4});
  ps.create("enc.fwd.bi", {1, 4});
  ps.create("norm.g", {1, 4});
  init_params(ps, 3);

  for (float x : named(ps, "f.b").data) CHECK(x == 0.0f);
  for (float x : named(ps, "enc.fwd.bi").data) CHECK(x == 0.0f);
  for (float x : named(ps, "norm.g").data) CHECK(x == 1.0f);
  bool any_nonzero = false;
  for (float x : named(ps, "f.w").data) any_nonzero = any_nonzero || x != 0.0f;
  CHECK(any_nonzero);
}

TEST_CASE("initialization is seed-deterministic") {
  auto build = [] {
    ParamSet ps;
    ps.create("a.w", {4, 5});
    ps.create("b.w", {5, 6});
    return ps;
  };
  ParamSet p1 = build(), p2 = build(), p3 = build();
  init_params(p1, 42);
  init_params(p2, 42);
  init_params(p3, 43);
  CHECK(same_params(p1, p2));
  CHECK(!same_params(p1, p3));
}

TEST_CASE("gradient norm and clipping") {
  std::vector<std::vector<double>> grads = {{3.0}, {0.0, 4.0}};
  CHECK(global_grad_norm(grads) == doctest::Approx(5.0).epsilon(1e-12));

  SUBCASE("above the cap the direction is kept and the norm hits the cap") {
    clip_gradients(grads, 2.5);
    CHECK(grads[0][0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(grads[1][1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(global_grad_norm(grads) == doctest::Approx(2.5).epsilon(1e-12));
  }
  SUBCASE("below the cap nothing moves") {
    clip_gradients(grads, 10.0);
    CHECK(grads[0][0] == 3.0);
    CHECK(grads[1][1] == 4.0);
  }
  SUBCASE("all-zero gradients are left alone") {
    std::vector<std::vector<double>> zero = {{0.0, 0.0}};
    clip_gradients(zero, 1.0);
    CHECK(zero[0][0] == 0.0);
    CHECK(zero[0][1] == 0.0);
  }
}

TEST_CASE("the first Adam step moves weights by about one learning rate") {
  ParamSet ps;
  ps.create("p.w", {1, 3});
  Tensor& t = ps.at(0);
  t.data = {1.0f, 2.0f, 3.0f};
  AdamState state(ps);
  TrainConfig tc;
  tc.lr = 0.001;

  // With zeroed moments, m-hat = g and v-hat = g^2, so the update is
  // lr * g / (|g| + eps): one learning rate along the gradient sign, and no
  // motion at all where the gradient is exactly zero.
  adam_step(ps, {{0.5, -2.0, 0.0}}, state, tc);
  CHECK(state.t == 1);
  CHECK(std::abs(t.data[0] - (1.0 - tc.lr)) < 1e-6);
  CHECK(std::abs(t.data[1] - (2.0 + tc.lr)) < 1e-6);
  CHECK(t.data[2] == 3.0f);
}

TEST_CASE("a multi-step Adam trajectory matches a double-precision mirror") {
  ParamSet ps;
  ps.create("p.w", {1, 4});
  Tensor& t = ps.at(0);
  t.data = {0.3f, -0.7f, 1.1f, 0.0f};
  AdamState state(ps);
  TrainConfig tc;
  tc.lr = 0.01;
  tc.beta1 = 0.75;
  tc.beta2 = 0.999;

  std::vector<double> ref(t.data.begin(), t.data.end());
  std::vector<double> m(4, 0.0), v(4, 0.0);
  for (int step = 1; step <= 7; ++step) {
    std::vector<double> g(4);
    for (int i = 0; i < 4; ++i) g[static_cast<size_t>(i)] = std::sin(0.9 * step + i);
    adam_step(ps, {g}, state, tc);

    const double bc1 = 1.0 - std::pow(tc.beta1, step);
    const double bc2 = 1.0 - std::pow(tc.beta2, step);
    for (size_t i = 0; i < 4; ++i) {
      m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g[i];
      v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g[i] * g[i];
      const double update = tc.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + tc.adam_eps);
      // The stored parameter is rounded to f32 after every step; the mirror
      // has to round at the same points to stay bit-exact.
      ref[i] = static_cast<double>(static_cast<float>(ref[i] - update));
    }
  }
  CHECK(state.t == 7);
  for (size_t i = 0; i < 4; ++i) CHECK(static_cast<double>(t.data[i]) == ref[i]);
}

TEST_CASE("expert subset selection") {
  const std::vector<ExpertSpec> avail = {
      {"obj", 8, "object"}, {"act", 8, "action"}, {"aud", 4, "other"}};

  SUBCASE("an empty subset keeps everything") {
    const auto out = select_experts(avail, {});
    REQUIRE(out.size() == 3);
    CHECK(out[1].name == "act");
  }
  SUBCASE("selection preserves the available order, not the request order") {
    const auto out = select_experts(avail, {"aud", "obj"});
    REQUIRE(out.size() == 2);
    CHECK(out[0].name == "obj");
    CHECK(out[1].name == "aud");
    CHECK(out[1].raw_dim == 4);
  }
  SUBCASE("an unknown name reports what is available") {
    CHECK_THROWS_WITH_AS(select_experts(avail, {"video"}),
                         doctest::Contains("unknown expert 'video'"), input_error);
    CHECK_THROWS_WITH_AS(select_experts(avail, {"video"}),
                         doctest::Contains("obj, act, aud"), input_error);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.validate();  // defaults are fine

  auto reject = [](void (*tweak)(TrainConfig&)) {
    TrainConfig bad;
    tweak(bad);
    CHECK_THROWS_AS(bad.validate(), input_error);
  };
  reject([](TrainConfig& c) { c.lr = 0.0; });
  reject([](TrainConfig& c) { c.beta1 = 1.0; });
  reject([](TrainConfig& c) { c.beta2 = 0.0; });
  reject([](TrainConfig& c) { c.adam_eps = 0.0; });
  reject([](TrainConfig& c) { c.alpha = -0.5; });
  reject([](TrainConfig& c) { c.batch = 0; });
  reject([](TrainConfig& c) { c.epochs = 0; });
  reject([](TrainConfig& c) { c.max_len = 2; });
}

TEST_CASE("loss log formatting") {
  LossRow r;
  r.epoch = 1;
  r.step = 2;
  r.elbo_term = 1.5;
  r.match_term = 0.25;
  r.total = 1.75;
  CHECK(loss_csv({r}) ==
        "epoch,step,elbo_term,match_term,total\n"
        "1,2,1.50000000,0.25000000,1.75000000\n");
  CHECK(loss_csv({}) == "epoch,step,elbo_term,match_term,total\n");
}

TEST_CASE("checkpoints restore every bit and carry their metadata") {
  const fs::path dir = test_dir("trainer_ckpt");
  const ModelConfig mc = tiny_model(Variant::CPcfg, 9, {});

  ParamSet ps;
  register_model_params(mc, ps);
  init_params(ps, 21);
  ParamSet orig;
  register_model_params(mc, orig);
  init_params(orig, 21);

  const std::string path = (dir / "model.gfc").string();
  save_checkpoint(path, ps, {{"note", "unit"}, {"epoch", 4}});

  // Scramble, then reload.
  for (size_t k = 0; k < ps.size(); ++k)
    for (float& x : ps.at(k).data) x += 1.0f;
  CHECK(!same_params(ps, orig));
  load_checkpoint(path, ps);
  CHECK(same_params(ps, orig));

  const nlohmann::json meta = read_checkpoint_meta(path);
  CHECK(meta.at("note") == "unit");
  CHECK(meta.at("epoch") == 4);

  // A different architecture cannot absorb the file.
  ParamSet other;
  register_model_params(tiny_model(Variant::CPcfg, 11, {}), other);
  CHECK_THROWS(load_checkpoint(path, other));
}

TEST_CASE("a small parser-only run is reproducible and improves its objective") {
  const SynthData synth = synth_corpus(40, 11);
  const Vocab vocab = full_vocab(synth.entries);
  const ModelConfig mc = tiny_model(Variant::CPcfg, vocab.size(), {});
  TrainData data;
  data.entries = &synth.entries;
  data.vocab = &vocab;

  TrainConfig tc = tiny_train();
  tc.epochs = 3;

  const RunResult a = train_run(mc, tc, data, 5, "");
  const RunResult b = train_run(mc, tc, data, 5, "");
  CHECK(same_params(a.params, b.params));
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);
    CHECK(a.log[i].match_term == 0.0);
  }

  REQUIRE(a.epoch_elbo.size() == 3);
  CHECK(a.epoch_elbo.back() < a.epoch_elbo.front());

  const RunResult c = train_run(mc, tc, data, 6, "");
  CHECK(!same_params(a.params, c.params));
}

TEST_CASE("a grounded run writes checkpoints, a manifest, and a consistent loss log") {
  const fs::path dir = test_dir("trainer_run");
  const SynthData synth = synth_corpus(24, 12);
  const Vocab vocab = full_vocab(synth.entries);

  const std::string fpath = (dir / "features.gff").string();
  write_features(fpath, synth.experts, synth.features);
  const FeatureStore store = load_features(fpath);

  const ModelConfig mc = tiny_model(Variant::MmcPcfg, vocab.size(), synth.experts);
  TrainData data;
  data.entries = &synth.entries;
  data.vocab = &vocab;
  data.features = &store;

  TrainConfig tc = tiny_train();
  tc.alpha = 0.5;
  const std::string run_dir = (dir / "run").string();
  const RunResult rr = train_run(mc, tc, data, 9, run_dir);

  REQUIRE(rr.checkpoints.size() == 2);
  CHECK(fs::exists(run_dir + "/checkpoint-e001.gfc"));
  CHECK(fs::exists(run_dir + "/checkpoint-e002.gfc"));
  CHECK(fs::exists(run_dir + "/loss.csv"));
  CHECK(fs::exists(run_dir + "/manifest.json"));

  bool any_match = false;
  for (const LossRow& r : rr.log) {
    CHECK(r.total == r.elbo_term + tc.alpha * r.match_term);
    any_match = any_match || r.match_term != 0.0;
  }
  CHECK(any_match);

  std::ifstream min(run_dir + "/manifest.json");
  const nlohmann::json manifest = nlohmann::json::parse(min);
  CHECK(manifest.at("variant") == "mmc-pcfg");
  CHECK(manifest.at("seed") == 9);
  CHECK(manifest.at("alpha") == 0.5);
  CHECK(manifest.at("epochs") == 2);
  CHECK(manifest.at("num_streams") == 3);
  REQUIRE(manifest.at("experts").size() == 3);
  CHECK(manifest.at("experts")[0] == synth.experts[0].name);
  CHECK(manifest.at("checkpoints").size() == 2);

  // The saved final checkpoint holds exactly the returned parameters.
  ParamSet loaded;
  register_model_params(mc, loaded);
  load_checkpoint(rr.checkpoints.back(), loaded);
  CHECK(same_params(loaded, rr.params));
  const nlohmann::json meta = read_checkpoint_meta(rr.checkpoints.back());
  CHECK(meta.at("epoch") == 2);
  CHECK(meta.at("vocab_hash") == hash_hex(vocab_hash(vocab)));
  CHECK(meta.at("model").at("variant") == "mmc-pcfg");

  std::ifstream lin(run_dir + "/loss.csv");
  std::string header;
  std::getline(lin, header);
  CHECK(header == "epoch,step,elbo_term,match_term,total");
  int rows = 0;
  for (std::string line; std::getline(lin, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == static_cast<int>(rr.log.size()));
}

TEST_CASE("alpha zero leaves the grounding tower untouched") {
  const SynthData synth = synth_corpus(18, 13);
  const Vocab vocab = full_vocab(synth.entries);
  const std::vector<ExpertSpec> one = {synth.experts[0]};

  const fs::path dir = test_dir("trainer_alpha0");
  const std::string fpath = (dir / "features.gff").string();
  write_features(fpath, synth.experts, synth.features);
  const FeatureStore store = load_features(fpath);

  const ModelConfig mc = tiny_model(Variant::VcPcfg, vocab.size(), one);
  TrainData data;
  data.entries = &synth.entries;
  data.vocab = &vocab;
  data.features = &store;

  TrainConfig tc = tiny_train();
  tc.epochs = 1;
  tc.alpha = 0.0;
  const RunResult rr = train_run(mc, tc, data, 4, "");

  ParamSet fresh;
  register_model_params(mc, fresh);
  init_params(fresh, 4);
  bool grammar_moved = false;
  for (size_t k = 0; k < rr.params.size(); ++k) {
    const std::string& name = rr.params.names()[k];
    if (name.rfind("match.", 0) == 0 || name.rfind("fusion.", 0) == 0) {
      CHECK(same_bits(rr.params.at(k), named(fresh, name)));
    } else {
      grammar_moved = grammar_moved || !same_bits(rr.params.at(k), named(fresh, name));
    }
  }
  CHECK(grammar_moved);
}

TEST_CASE("parameter registration follows the variant") {
  const SynthData synth = synth_corpus(6, 14);

  ParamSet plain;
  register_model_params(tiny_model(Variant::CPcfg, 9, {}), plain);
  for (const std::string& name : plain.names()) {
    CHECK(name.rfind("match.", 0) == std::string::npos);
    CHECK(name.rfind("fusion.", 0) == std::string::npos);
  }

  ParamSet single;
  register_model_params(
      tiny_model(Variant::VcPcfg, 9, {synth.experts[0]}), single);
  int fusion_tensors = 0;
  bool has_match = false;
  for (const std::string& name : single.names()) {
    if (name.rfind("fusion.", 0) == 0) ++fusion_tensors;
    has_match = has_match || name.rfind("match.", 0) == 0;
  }
  // Single-expert grounding only needs the one projection (weight + bias).
  CHECK(fusion_tensors == 2);
  CHECK(has_match);

  ParamSet multi;
  register_model_params(tiny_model(Variant::MmcPcfg, 9, synth.experts), multi);
  CHECK(multi.size() > single.size());
}

TEST_CASE("the worker count does not change training results") {
  const SynthData synth = synth_corpus(16, 15);
  const Vocab vocab = full_vocab(synth.entries);
  const ModelConfig mc = tiny_model(Variant::CPcfg, vocab.size(), {});
  TrainData data;
  data.entries = &synth.entries;
  data.vocab = &vocab;

  TrainConfig tc = tiny_train();
  tc.epochs = 1;
  tc.batch = 8;

  setenv("GF_THREADS", "1", 1);
  const RunResult serial = train_run(mc, tc, data, 3, "");
  setenv("GF_THREADS", "4", 1);
  const RunResult parallel = train_run(mc, tc, data, 3, "");
  unsetenv("GF_THREADS");

  CHECK(same_params(serial.params, parallel.params));
  REQUIRE(serial.log.size() == parallel.log.size());
  for (size_t i = 0; i < serial.log.size(); ++i)
    CHECK(serial.log[i].total == parallel.log[i].total);
}
