#include "gf/fusion.h"

#include <cmath>

#include "gf/common.h"
#include "gf/layers.h"

namespace gf {

void FusionConfig::validate() const {
  check(!experts.empty(), "fusion config declares no experts");
  for (const ExpertSpec& e : experts)
    check(!e.name.empty() && e.raw_dim >= 1, "fusion expert '", e.name,
          "' needs a name and a positive raw dimension");
  check(joint_dim >= 1 && layers >= 1 && ffn_dim >= 1 && heads >= 1 && chunks >= 1,
        "fusion dimensions must be positive");
  check(joint_dim % heads == 0, "joint dimension ", joint_dim,
        " must divide evenly into ", heads, " heads");
  check(dropout >= 0.0 && dropout < 1.0, "fusion dropout must lie in [0, 1)");
}

std::vector<int> chunk_sizes(int length, int chunks) {
  check(length >= 1 && chunks >= 1, "chunk_sizes: need positive length and chunk count");
  const int parts = std::min(length, chunks);
  std::vector<int> sizes(static_cast<size_t>(parts), length / chunks);
  const int rem = length - (length / chunks) * chunks;
  for (int i = 0; i < parts; ++i)
    if (i < rem) sizes[static_cast<size_t>(i)] += 1;
  // When length < chunks the base size is 0 and the remainder fills the first
  // `length` parts with one frame each; zero-size tails were never created.
  return sizes;
}

std::vector<double> chunk_pool(const float* data, int length, int dim, int chunks,
                               int* out_len) {
  const std::vector<int> sizes = chunk_sizes(length, chunks);
  *out_len = static_cast<int>(sizes.size());
  std::vector<double> out(sizes.size() * static_cast<size_t>(dim), 0.0);
  int frame = 0;
  for (size_t part = 0; part < sizes.size(); ++part) {
    for (int f = 0; f < sizes[part]; ++f, ++frame)
      for (int d = 0; d < dim; ++d)
        out[part * dim + d] += data[static_cast<size_t>(frame) * dim + d];
    for (int d = 0; d < dim; ++d) out[part * dim + d] /= sizes[part];
  }
  return out;
}

bool is_chunked_category(const std::string& category) {
  return category == "object" || category == "action" || category == "scene";
}

std::vector<double> sinusoidal_encoding(int position, int dim) {
  std::vector<double> enc(static_cast<size_t>(dim));
  for (int i = 0; i < dim; i += 2) {
    const double rate = std::pow(10000.0, static_cast<double>(i) / dim);
    enc[static_cast<size_t>(i)] = std::sin(position / rate);
    if (i + 1 < dim) enc[static_cast<size_t>(i) + 1] = std::cos(position / rate);
  }
  return enc;
}

void register_fusion_params(const FusionConfig& cfg, ParamSet& ps) {
  cfg.validate();
  const int D = cfg.joint_dim;
  for (const ExpertSpec& e : cfg.experts) {
    ps.create("fusion.proj." + e.name + ".w", {e.raw_dim, D});
    ps.create("fusion.proj." + e.name + ".b", {1, D});
  }
  ps.create("fusion.etype", {static_cast<int>(cfg.experts.size()), D});
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "fusion.l" + std::to_string(l);
    for (const char* mat : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      ps.create(p + mat, {D, D});
    for (const char* vec : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"})
      ps.create(p + vec, {1, D});
    ps.create(p + ".ln1.g", {1, D});
    ps.create(p + ".ln1.b", {1, D});
    ps.create(p + ".ffn.w1", {D, cfg.ffn_dim});
    ps.create(p + ".ffn.b1", {1, cfg.ffn_dim});
    ps.create(p + ".ffn.w2", {cfg.ffn_dim, D});
    ps.create(p + ".ffn.b2", {1, D});
    ps.create(p + ".ln2.g", {1, D});
    ps.create(p + ".ln2.b", {1, D});
  }
}

namespace {

// Pooled raw tokens for one expert as a graph constant [len, raw_dim];
// missing streams become one zero token.
Var pooled_tokens(Graph& g, const FusionConfig& cfg, const VideoFeatures& vf, int m,
                  int* out_len) {
  const ExpertSpec& spec = cfg.experts[static_cast<size_t>(m)];
  const int len = vf.lengths[static_cast<size_t>(m)];
  if (len == 0) {
    *out_len = 1;
    return g.zeros(1, spec.raw_dim);
  }
  check(vf.streams[static_cast<size_t>(m)].size() ==
            static_cast<size_t>(len) * spec.raw_dim,
        "expert '", spec.name, "': feature block has ",
        vf.streams[static_cast<size_t>(m)].size(), " values, expected ", len, "x",
        spec.raw_dim);
  const int chunks = is_chunked_category(spec.category) ? cfg.chunks : 1;
  std::vector<double> pooled =
      chunk_pool(vf.streams[static_cast<size_t>(m)].data(), len, spec.raw_dim, chunks,
                 out_len);
  return g.constant(*out_len, spec.raw_dim, std::move(pooled));
}

}  // namespace

std::vector<Var> fuse(Graph& g, const ParamSet& ps, const FusionConfig& cfg,
                      const VideoFeatures& vf, FusionDebug* dbg) {
  cfg.validate();
  const int M = static_cast<int>(cfg.experts.size());
  check(static_cast<int>(vf.streams.size()) == M &&
            static_cast<int>(vf.lengths.size()) == M,
        "fuse: video carries ", vf.streams.size(), " streams, config declares ", M);
  bool any_present = false;
  for (int len : vf.lengths) any_present = any_present || len > 0;
  check(any_present, "fuse: every expert stream is missing for this video");

  ParamLookup P(g, ps);
  const int D = cfg.joint_dim;

  // Projected token stream with per-expert averaged tokens in front.
  std::vector<Var> parts;
  std::vector<int> avg_rows(static_cast<size_t>(M));
  std::vector<int> expert_of;  // per final token
  std::vector<int> pos_of;     // positional index per token (avg = 0)
  for (int m = 0; m < M; ++m) {
    int len = 0;
    Var raw = pooled_tokens(g, cfg, vf, m, &len);
    const std::string& name = cfg.experts[static_cast<size_t>(m)].name;
    Var proj = g.add(g.matmul(raw, P("fusion.proj." + name + ".w")),
                     P("fusion.proj." + name + ".b"));
    Var avg = g.mean_rows(proj);
    avg_rows[static_cast<size_t>(m)] = static_cast<int>(expert_of.size());
    expert_of.push_back(m);
    pos_of.push_back(0);
    for (int t = 0; t < len; ++t) {
      expert_of.push_back(m);
      pos_of.push_back(t + 1);
    }
    parts.push_back(avg);
    parts.push_back(proj);
  }
  Var x = g.concat_rows(parts);
  const int T = g.rows(x);

  // Expert-type embedding + positional encoding per token.  The type rows
  // come from a learned table, so the encoding matrix is rebuilt as table
  // lookup plus a fixed constant to keep gradients flowing into the table.
  Var etype_rows = g.gather_rows(P("fusion.etype"), expert_of);
  std::vector<double> posmat(static_cast<size_t>(T) * D);
  for (int t = 0; t < T; ++t) {
    const std::vector<double> pe = sinusoidal_encoding(pos_of[static_cast<size_t>(t)], D);
    std::copy(pe.begin(), pe.end(), posmat.begin() + static_cast<size_t>(t) * D);
  }
  Var enc = g.add(etype_rows, g.constant(T, D, std::move(posmat)));

  Var mask{};
  if (cfg.mask_missing) {
    std::vector<double> mrow(static_cast<size_t>(T), 0.0);
    for (int t = 0; t < T; ++t)
      if (vf.lengths[static_cast<size_t>(expert_of[static_cast<size_t>(t)])] == 0)
        mrow[static_cast<size_t>(t)] = -1e9;
    mask = g.constant(1, T, std::move(mrow));
  }

  if (dbg != nullptr) {
    dbg->tokens = T;
    dbg->layer_encodings.clear();
    dbg->attention.clear();
  }

  const int dh = D / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "fusion.l" + std::to_string(l);
    const bool add_enc = cfg.encodings_every_layer || l == 0;
    Var xin = add_enc ? g.add(x, enc) : x;
    if (dbg != nullptr)
      dbg->layer_encodings.push_back(add_enc ? g.value(enc)
                                             : std::vector<double>(g.value(enc).size(), 0.0));
    Var q = g.add(g.matmul(xin, P(p + ".attn.wq")), P(p + ".attn.bq"));
    Var k = g.add(g.matmul(xin, P(p + ".attn.wk")), P(p + ".attn.bk"));
    Var v = g.add(g.matmul(xin, P(p + ".attn.wv")), P(p + ".attn.bv"));
    std::vector<Var> heads_out;
    for (int h = 0; h < cfg.heads; ++h) {
      Var qh = g.slice(q, 0, T, h * dh, (h + 1) * dh);
      Var kh = g.slice(k, 0, T, h * dh, (h + 1) * dh);
      Var vh = g.slice(v, 0, T, h * dh, (h + 1) * dh);
      Var scores = g.mul_scalar(g.matmul(qh, g.transpose(kh)), scale);
      if (mask.ok()) scores = g.add(scores, mask);
      Var attn = g.softmax_rows(scores);
      if (dbg != nullptr) dbg->attention.push_back(g.value(attn));
      attn = g.dropout(attn, cfg.dropout);
      heads_out.push_back(g.matmul(attn, vh));
    }
    Var merged = heads_out[0];
    for (size_t h = 1; h < heads_out.size(); ++h)
      merged = g.concat_cols(merged, heads_out[h]);
    Var attn_out = g.add(g.matmul(merged, P(p + ".attn.wo")), P(p + ".attn.bo"));
    x = g.layer_norm_rows(g.add(x, g.dropout(attn_out, cfg.dropout)), P(p + ".ln1.g"),
                          P(p + ".ln1.b"));
    Var ffn = g.add(
        g.matmul(g.relu(g.add(g.matmul(x, P(p + ".ffn.w1")), P(p + ".ffn.b1"))),
                 P(p + ".ffn.w2")),
        P(p + ".ffn.b2"));
    x = g.layer_norm_rows(g.add(x, g.dropout(ffn, cfg.dropout)), P(p + ".ln2.g"),
                          P(p + ".ln2.b"));
  }

  std::vector<Var> psi(static_cast<size_t>(M));
  for (int m = 0; m < M; ++m) {
    const int r = avg_rows[static_cast<size_t>(m)];
    psi[static_cast<size_t>(m)] = g.slice(x, r, r + 1, 0, D);
  }
  return psi;
}

Var image_video_rep(Graph& g, const ParamSet& ps, const FusionConfig& cfg,
                    const VideoFeatures& vf, int expert_index) {
  cfg.validate();
  check(0 <= expert_index && expert_index < static_cast<int>(cfg.experts.size()),
        "image_video_rep: expert index ", expert_index, " out of range");
  const ExpertSpec& spec = cfg.experts[static_cast<size_t>(expert_index)];
  const int len = vf.lengths[static_cast<size_t>(expert_index)];
  ParamLookup P(g, ps);
  Var raw;
  if (len == 0) {
    raw = g.zeros(1, spec.raw_dim);
  } else {
    int pooled_len = 0;
    std::vector<double> pooled = chunk_pool(
        vf.streams[static_cast<size_t>(expert_index)].data(), len, spec.raw_dim, 1,
        &pooled_len);
    raw = g.constant(1, spec.raw_dim, std::move(pooled));
  }
  return g.add(g.matmul(raw, P("fusion.proj." + spec.name + ".w")),
               P("fusion.proj." + spec.name + ".b"));
}

}  // namespace gf
