#include "gf/trainer.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "gf/checkpoint.h"
#include "gf/common.h"
#include "gf/parallel.h"
#include "gf/rng.h"

namespace gf {

void TrainConfig::validate() const {
  check_input(lr > 0.0, "train config: learning rate must be positive");
  check_input(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
              "train config: Adam betas must lie in (0, 1)");
  check_input(adam_eps > 0.0, "train config: Adam epsilon must be positive");
  check_input(alpha >= 0.0, "train config: alpha must be >= 0");
  check_input(batch >= 1, "train config: batch size must be >= 1");
  check_input(epochs >= 1, "train config: epochs must be >= 1");
  check_input(max_len >= 3, "train config: length cutoff must be >= 3");
}

std::vector<ExpertSpec> select_experts(const std::vector<ExpertSpec>& available,
                                       const std::vector<std::string>& subset) {
  if (subset.empty()) return available;
  std::unordered_set<std::string> want(subset.begin(), subset.end());
  for (const std::string& name : subset) {
    bool found = false;
    for (const ExpertSpec& e : available) found = found || e.name == name;
    if (!found) {
      std::string names;
      for (const ExpertSpec& e : available) names += (names.empty() ? "" : ", ") + e.name;
      fail_input("unknown expert '", name, "' (available: ", names, ")");
    }
  }
  std::vector<ExpertSpec> out;
  for (const ExpertSpec& e : available)
    if (want.count(e.name)) out.push_back(e);
  return out;
}

void init_params(ParamSet& ps, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x58415649ULL));
  for (size_t k = 0; k < ps.size(); ++k) {
    Tensor& t = ps.at(k);
    const std::string& name = ps.names()[k];
    const std::string suffix = name.substr(name.find_last_of('.') + 1);
    if (suffix == "g") {
      for (float& x : t.data) x = 1.0f;
    } else if (!suffix.empty() && suffix[0] == 'b') {
      for (float& x : t.data) x = 0.0f;
    } else {
      const double bound = std::sqrt(6.0 / (t.rows() + t.cols()));
      for (float& x : t.data) x = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
}

AdamState::AdamState(const ParamSet& ps) {
  m.resize(ps.size());
  v.resize(ps.size());
  for (size_t k = 0; k < ps.size(); ++k) {
    m[k].assign(static_cast<size_t>(ps.at(k).numel()), 0.0);
    v[k].assign(static_cast<size_t>(ps.at(k).numel()), 0.0);
  }
}

double global_grad_norm(const std::vector<std::vector<double>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  return std::sqrt(sq);
}

void clip_gradients(std::vector<std::vector<double>>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (double& x : g) x *= scale;
}

void adam_step(ParamSet& ps, const std::vector<std::vector<double>>& grads,
               AdamState& state, const TrainConfig& cfg) {
  check(grads.size() == ps.size(), "adam_step: gradient/parameter count mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < ps.size(); ++k) {
    Tensor& t = ps.at(k);
    check(grads[k].size() == t.data.size(), "adam_step: gradient shape mismatch for '",
          ps.names()[k], "'");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double g = grads[k][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
      t.data[i] = static_cast<float>(static_cast<double>(t.data[i]) - update);
    }
  }
}

std::string loss_csv(const std::vector<LossRow>& log) {
  std::string out = "epoch,step,elbo_term,match_term,total\n";
  char buf[160];
  for (const LossRow& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.8f,%.8f,%.8f\n", r.epoch, r.step,
                  r.elbo_term, r.match_term, r.total);
    out += buf;
  }
  return out;
}

namespace {

// Seed streams, composed so every (purpose, epoch, step, slot) tuple draws
// from its own generator regardless of thread scheduling.
uint64_t stream_tag(uint64_t tag, int epoch, int step, int slot) {
  return (tag << 56) ^ (static_cast<uint64_t>(static_cast<uint32_t>(epoch)) << 36) ^
         (static_cast<uint64_t>(static_cast<uint32_t>(step)) << 16) ^
         static_cast<uint64_t>(static_cast<uint32_t>(slot));
}
constexpr uint64_t kStreamShuffle = 2;
constexpr uint64_t kStreamDropout = 3;
constexpr uint64_t kStreamLatent = 4;
constexpr uint64_t kStreamNegatives = 5;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write '", path, "'");
  out << text;
  check(out.good(), "short write to '", path, "'");
}

}  // namespace

RunResult train_run(const ModelConfig& mc, const TrainConfig& tc,
                    const TrainData& data, uint64_t seed,
                    const std::string& run_dir,
                    const std::function<void(int, const RunResult&)>& on_epoch) {
  tc.validate();
  check(data.entries != nullptr && data.vocab != nullptr,
        "train_run: corpus and vocabulary are required");
  const std::vector<CorpusEntry>& entries = *data.entries;
  const bool grounded = mc.grounded();
  const bool want_match = grounded && tc.alpha > 0.0;

  const std::vector<int> train = training_indices(entries, tc.max_len);
  check_input(!train.empty(), "no trainable sentences (need 2 <= length < ",
              tc.max_len, ")");

  // Per-video feature blocks, fetched once.
  std::unordered_map<std::string, VideoFeatures> fcache;
  if (grounded) {
    check_input(data.features != nullptr,
                "variant ", variant_name(mc.variant), " requires a feature file");
    for (int idx : train) {
      const std::string& vid = entries[static_cast<size_t>(idx)].video_id;
      if (fcache.count(vid)) continue;
      check_input(data.features->has(vid), "no features for video '", vid,
                  "' (sentence '", entries[static_cast<size_t>(idx)].id, "')");
      fcache.emplace(vid, select_streams(data.features->get(vid),
                                         data.features->experts, mc.fusion.experts));
    }
  }

  std::vector<std::vector<int>> enc(entries.size());
  for (int idx : train)
    enc[static_cast<size_t>(idx)] = encode(*data.vocab, entries[static_cast<size_t>(idx)].tokens);

  RunResult rr;
  rr.run_dir = run_dir;
  register_model_params(mc, rr.params);
  init_params(rr.params, seed);
  AdamState adam(rr.params);

  std::unordered_map<std::string, size_t> pindex;
  for (size_t k = 0; k < rr.params.size(); ++k) pindex[rr.params.names()[k]] = k;

  if (!run_dir.empty()) std::filesystem::create_directories(run_dir);

  struct Slot {
    std::unique_ptr<Graph> g;
    PairOutputs out;
    SpanSideValues sv;
    VideoSideValues vv;
    double elbo = 0.0;
    double match = 0.0;
  };

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto batches =
        make_batches(train, tc.batch, derive_seed(seed, stream_tag(kStreamShuffle, epoch, 0, 0)));
    double epoch_elbo_sum = 0.0;
    int step = 0;
    for (const std::vector<int>& batch : batches) {
      ++step;
      const int B = static_cast<int>(batch.size());
      std::vector<Slot> slots(static_cast<size_t>(B));

      parallel_for(B, [&](int p) {
        Slot& s = slots[static_cast<size_t>(p)];
        const CorpusEntry& entry = entries[static_cast<size_t>(batch[static_cast<size_t>(p)])];
        s.g = std::make_unique<Graph>(true, derive_seed(seed, stream_tag(kStreamDropout, epoch, step, p)));
        Rng zrng(derive_seed(seed, stream_tag(kStreamLatent, epoch, step, p)));
        const VideoFeatures* vf = grounded ? &fcache.at(entry.video_id) : nullptr;
        s.out = model_forward(*s.g, rr.params, mc,
                              enc[static_cast<size_t>(batch[static_cast<size_t>(p)])], vf,
                              &zrng, want_match);
        if (s.out.grounded) {
          s.sv = detach_span_side(*s.g, s.out.span);
          s.vv = detach_video_side(*s.g, s.out.psi);
        }
      });

      // Negative assignments come from one serial draw so they do not depend
      // on worker scheduling.
      std::vector<int> negs(static_cast<size_t>(B), -1);
      std::vector<std::vector<int>> negrows(static_cast<size_t>(B));
      if (want_match && B > 1) {
        Rng nrng(derive_seed(seed, stream_tag(kStreamNegatives, epoch, step, 0)));
        for (int p = 0; p < B; ++p)
          negs[static_cast<size_t>(p)] =
              (p + 1 + static_cast<int>(nrng.uniform_int(static_cast<uint64_t>(B - 1)))) % B;
        for (int p = 0; p < B; ++p) {
          const int ncells = slots[static_cast<size_t>(negs[static_cast<size_t>(p)])].sv.cells;
          negrows[static_cast<size_t>(p)].resize(static_cast<size_t>(slots[static_cast<size_t>(p)].sv.cells));
          for (int& r : negrows[static_cast<size_t>(p)])
            r = static_cast<int>(nrng.uniform_int(static_cast<uint64_t>(ncells)));
        }
      }

      parallel_for(B, [&](int p) {
        Slot& s = slots[static_cast<size_t>(p)];
        Graph& g = *s.g;
        Var total = s.out.parse.neg_elbo;
        if (s.out.grounded && negs[static_cast<size_t>(p)] >= 0) {
          const Slot& ns = slots[static_cast<size_t>(negs[static_cast<size_t>(p)])];
          Var match = matching_loss(g, mc.match, s.out.span, s.out.psi, ns.sv,
                                    negrows[static_cast<size_t>(p)], ns.vv);
          s.match = g.scalar_value(match);
          total = g.add(total, g.mul_scalar(match, tc.alpha));
        }
        s.elbo = g.scalar_value(s.out.parse.neg_elbo);
        const double total_val = g.scalar_value(total);
        if (!std::isfinite(total_val)) {
          const CorpusEntry& entry = entries[static_cast<size_t>(batch[static_cast<size_t>(p)])];
          fail("non-finite loss (", total_val, ") on sentence '", entry.id, "'");
        }
        g.backward(total);
      });

      // Merge in sentence order, then step.
      std::vector<std::vector<double>> grads(rr.params.size());
      for (size_t k = 0; k < rr.params.size(); ++k)
        grads[k].assign(static_cast<size_t>(rr.params.at(k).numel()), 0.0);
      const double inv_b = 1.0 / B;
      for (const Slot& s : slots) {
        for (const Graph::ParamGrad& pg : s.g->param_grads()) {
          if (pg.grad->empty()) continue;
          auto& dst = grads[pindex.at(pg.name)];
          check(dst.size() == pg.grad->size(), "gradient shape mismatch for '", pg.name, "'");
          for (size_t i = 0; i < dst.size(); ++i) dst[i] += inv_b * (*pg.grad)[i];
        }
      }
      if (tc.clip_norm > 0.0) clip_gradients(grads, tc.clip_norm);
      adam_step(rr.params, grads, adam, tc);

      LossRow row;
      row.epoch = epoch;
      row.step = step;
      for (const Slot& s : slots) {
        row.elbo_term += s.elbo * inv_b;
        row.match_term += s.match * inv_b;
      }
      row.total = row.elbo_term + tc.alpha * row.match_term;
      rr.log.push_back(row);
      epoch_elbo_sum += row.elbo_term;
    }
    rr.epoch_elbo.push_back(epoch_elbo_sum / static_cast<double>(batches.size()));

    if (!run_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint-e%03d.gfc", epoch);
      const std::string path = run_dir + "/" + name;
      nlohmann::json meta = {
          {"model", mc.to_json()},
          {"seed", seed},
          {"epoch", epoch},
          {"alpha", tc.alpha},
          {"vocab_hash", hash_hex(vocab_hash(*data.vocab))},
      };
      save_checkpoint(path, rr.params, meta);
      rr.checkpoints.push_back(path);
    }
    if (on_epoch) on_epoch(epoch, rr);
  }

  if (!run_dir.empty()) {
    write_text(run_dir + "/loss.csv", loss_csv(rr.log));
    nlohmann::json experts = nlohmann::json::array();
    for (const ExpertSpec& e : mc.fusion.experts) experts.push_back(e.name);
    nlohmann::json manifest = {
        {"variant", variant_name(mc.variant)},
        {"seed", seed},
        {"alpha", tc.alpha},
        {"epochs", tc.epochs},
        {"batch", tc.batch},
        {"lr", tc.lr},
        {"experts", experts},
        {"num_streams", experts.size()},
        {"train_sentences", train.size()},
        {"checkpoints", rr.checkpoints},
        {"loss_csv", "loss.csv"},
    };
    write_text(run_dir + "/manifest.json", manifest.dump(2) + "\n");
  }
  return rr;
}

}  // namespace gf
