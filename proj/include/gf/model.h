#pragma once

// Model variants and their assembly.
//
//   c-pcfg    parser only; video features are never read and the matching
//             modules are never constructed.
//   vc-pcfg   parser + matching against a single expert whose raw sequence
//             is averaged over time and linearly projected (no transformer).
//   mmc-pcfg  parser + matching against the multi-expert fused
//             representation from the transformer stack.
//
// A ModelConfig freezes every architectural choice; its JSON round-trip is
// stored in checkpoint headers so a saved model can be rebuilt and loaded
// without the original config file.

#include <string>
#include <vector>

#include <json.hpp>

#include "gf/compound.h"
#include "gf/fusion.h"
#include "gf/graph.h"
#include "gf/grounding.h"
#include "gf/tensor.h"
#include "gf/tree.h"

namespace gf {

enum class Variant { CPcfg, VcPcfg, MmcPcfg };

// Accepts "c-pcfg", "vc-pcfg", "mmc-pcfg" (case-insensitive).
Variant variant_from_string(const std::string& s);
std::string variant_name(Variant v);

struct ModelConfig {
  Variant variant = Variant::MmcPcfg;
  CompoundConfig compound;
  MatchConfig match;
  FusionConfig fusion;

  bool grounded() const { return variant != Variant::CPcfg; }

  // Fills the cross-module fields (vocabulary size, expert list, label and
  // expert counts) and validates.  `experts` must be empty for c-pcfg and
  // exactly one entry for vc-pcfg.
  void finalize(int vocab_size, const std::vector<ExpertSpec>& experts);

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Registers all tensors of the variant in a fixed order (the checkpoint
// layout and the initialization draw order).
void register_model_params(const ModelConfig& cfg, ParamSet& ps);

// One (sentence, video) training pair on one graph.  For c-pcfg (or when
// `with_matching` is false) only the parser runs and `grounded` is false.
struct PairOutputs {
  SentenceForward parse;
  bool grounded = false;
  SpanSide span;         // valid when grounded
  std::vector<Var> psi;  // fused (or single projected) video vectors
};

PairOutputs model_forward(Graph& g, const ParamSet& ps, const ModelConfig& cfg,
                          const std::vector<int>& words, const VideoFeatures* vf,
                          Rng* zrng, bool with_matching);

// Inference parse: posterior-mean z, CYK decode.  No sampling, no video.
ParseTree model_parse(const ParamSet& ps, const CompoundConfig& cfg,
                      const std::vector<int>& words);

}  // namespace gf
