#pragma once

// Multi-modal video fusion.  Each expert's raw feature sequence is chunk- or
// global-average-pooled, linearly projected into a joint space, and the
// concatenated token stream
//
//   X = [f_avg^1, f_1^1 .. f_L1^1, ..., f_avg^M, f_1^M .. f_LM^M]
//
// is passed through a post-norm self-attention stack.  Expert-type embeddings
// and fixed sinusoidal positional encodings (avg tokens at position 0) are
// added to the input of each attention layer (toggleable to first layer
// only).  The fused video representation is the output rows at the avg-token
// positions.  A single-expert path that skips the transformer entirely (one
// temporal average, one projection) is provided for image-style grounding.

#include <string>
#include <vector>

#include "gf/graph.h"
#include "gf/tensor.h"

namespace gf {

struct ExpertSpec {
  std::string name;
  int raw_dim = 0;
  std::string category = "other";  // object | action | scene | other
};

struct FusionConfig {
  std::vector<ExpertSpec> experts;
  int joint_dim = 512;
  int layers = 2;
  int ffn_dim = 2048;
  int heads = 8;
  double dropout = 0.1;
  int chunks = 8;
  bool encodings_every_layer = true;
  bool mask_missing = false;

  void validate() const;
};

// Raw per-video features: one row-major [lengths[m], experts[m].raw_dim]
// block per expert; length 0 marks a missing expert.
struct VideoFeatures {
  std::vector<std::vector<float>> streams;
  std::vector<int> lengths;
};

// Near-equal contiguous partition with the remainder spread over the earliest
// parts; zero-size parts are dropped.
std::vector<int> chunk_sizes(int length, int chunks);

// Average-pools each chunk; returns a [*out_len, dim] row-major block.
std::vector<double> chunk_pool(const float* data, int length, int dim, int chunks,
                               int* out_len);

bool is_chunked_category(const std::string& category);

// Fixed sinusoidal positional encoding for one position.
std::vector<double> sinusoidal_encoding(int position, int dim);

void register_fusion_params(const FusionConfig& cfg, ParamSet& ps);

struct FusionDebug {
  // Per layer: the encoding matrix (rows = tokens) added at that layer input.
  std::vector<std::vector<double>> layer_encodings;
  // Per layer*head (layer-major): attention weights, row-major [T, T].
  std::vector<std::vector<double>> attention;
  int tokens = 0;
};

// Fused per-expert video vectors, M nodes of shape [1, joint_dim].
std::vector<Var> fuse(Graph& g, const ParamSet& ps, const FusionConfig& cfg,
                      const VideoFeatures& vf, FusionDebug* dbg = nullptr);

// Single-expert path: temporal average of the raw sequence, then the
// expert's linear projection; [1, joint_dim].
Var image_video_rep(Graph& g, const ParamSet& ps, const FusionConfig& cfg,
                    const VideoFeatures& vf, int expert_index);

}  // namespace gf
