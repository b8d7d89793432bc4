#pragma once

// Joint optimization: per-batch loss = mean(-ELBO) + alpha * mean(matching),
// Adam with bias correction, global gradient-norm clipping, seed-determined
// shuffles and sampling, per-epoch checkpoints, and a loss-curve CSV.
//
// Batches fan out across worker threads in two phases: every pair first runs
// its forward pass and publishes detached span/video snapshots, then each
// pair scores its hinge loss against negatives drawn from those snapshots
// and runs backward.  Gradients are merged in sentence order, so results do
// not depend on the worker count.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gf/dataio.h"
#include "gf/model.h"
#include "gf/tensor.h"

namespace gf {

struct TrainConfig {
  double lr = 0.001;
  double beta1 = 0.75;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double alpha = 1.0;      // weight of the matching term
  double clip_norm = 5.0;  // global gradient-norm cap; <= 0 disables
  int batch = 16;
  int epochs = 10;
  int max_len = 20;  // train on sentences with 2 <= tokens < max_len
  std::vector<uint64_t> seeds{0};
  std::vector<std::string> experts;  // subset filter; empty keeps all

  void validate() const;
};

// Filters `available` (keeping its order) down to the requested subset;
// unknown names are an input error.  Empty subset keeps everything.
std::vector<ExpertSpec> select_experts(const std::vector<ExpertSpec>& available,
                                       const std::vector<std::string>& subset);

// Xavier-uniform weight matrices (bound sqrt(6/(fan_in+fan_out))), zero
// biases, unit layer-norm gains; draw order = parameter creation order.
void init_params(ParamSet& ps, uint64_t seed);

// Adam moment state, float64, one pair of buffers per tensor.
struct AdamState {
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;
  explicit AdamState(const ParamSet& ps);
};

double global_grad_norm(const std::vector<std::vector<double>>& grads);

// Scales every gradient by min(1, max_norm / norm): direction is preserved.
void clip_gradients(std::vector<std::vector<double>>& grads, double max_norm);

// One optimizer step; `grads` is aligned with the ParamSet tensor order.
void adam_step(ParamSet& ps, const std::vector<std::vector<double>>& grads,
               AdamState& state, const TrainConfig& cfg);

struct LossRow {
  int epoch = 0;
  int step = 0;
  double elbo_term = 0.0;   // batch mean of -ELBO
  double match_term = 0.0;  // batch mean of the hinge loss
  double total = 0.0;       // elbo_term + alpha * match_term
};

std::string loss_csv(const std::vector<LossRow>& log);

struct TrainData {
  const std::vector<CorpusEntry>* entries = nullptr;
  const Vocab* vocab = nullptr;
  const FeatureStore* features = nullptr;  // unused by c-pcfg
};

struct RunResult {
  std::string run_dir;
  std::vector<LossRow> log;
  std::vector<double> epoch_elbo;         // per-epoch mean of the ELBO term
  std::vector<std::string> checkpoints;   // one per epoch
  ParamSet params;                        // final state
};

// One training run.  Writes loss.csv, manifest.json, and per-epoch
// checkpoints under run_dir; an empty run_dir skips all file output.
// `on_epoch` (optional) is invoked after each epoch with the partial result.
RunResult train_run(const ModelConfig& mc, const TrainConfig& tc,
                    const TrainData& data, uint64_t seed,
                    const std::string& run_dir,
                    const std::function<void(int, const RunResult&)>& on_epoch = {});

}  // namespace gf
