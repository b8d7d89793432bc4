#include "gf/model.h"

#include <algorithm>

#include "gf/common.h"
#include "gf/dataio.h"

namespace gf {

Variant variant_from_string(const std::string& s) {
  const std::string v = lowercase(s);
  if (v == "c-pcfg") return Variant::CPcfg;
  if (v == "vc-pcfg") return Variant::VcPcfg;
  if (v == "mmc-pcfg") return Variant::MmcPcfg;
  fail_input("unknown variant '", s, "' (expected c-pcfg, vc-pcfg, or mmc-pcfg)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::CPcfg: return "c-pcfg";
    case Variant::VcPcfg: return "vc-pcfg";
    case Variant::MmcPcfg: return "mmc-pcfg";
  }
  fail("variant_name: bad enum value");
}

void ModelConfig::finalize(int vocab_size, const std::vector<ExpertSpec>& experts) {
  check_input(vocab_size >= 1, "model config: vocabulary is empty");
  compound.sizes.vocab = vocab_size;
  compound.validate();
  if (variant == Variant::CPcfg) {
    check_input(experts.empty(), "c-pcfg takes no expert streams");
    return;
  }
  if (variant == Variant::VcPcfg)
    check_input(experts.size() == 1, "vc-pcfg grounds on exactly one expert, got ",
                experts.size());
  else
    check_input(!experts.empty(), "mmc-pcfg needs at least one expert stream");
  fusion.experts = experts;
  match.vocab = vocab_size;
  match.labels = compound.sizes.nonterminals;
  match.joint_dim = fusion.joint_dim;
  match.num_experts =
      variant == Variant::VcPcfg ? 1 : static_cast<int>(experts.size());
  match.validate();
  if (variant == Variant::MmcPcfg) fusion.validate();
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json experts = nlohmann::json::array();
  for (const ExpertSpec& e : fusion.experts)
    experts.push_back({{"name", e.name}, {"raw_dim", e.raw_dim}, {"category", e.category}});
  return {
      {"variant", variant_name(variant)},
      {"nonterminals", compound.sizes.nonterminals},
      {"preterminals", compound.sizes.preterminals},
      {"vocab", compound.sizes.vocab},
      {"z_dim", compound.z_dim},
      {"embed_dim", compound.embed_dim},
      {"enc_embed_dim", compound.enc_embed_dim},
      {"enc_hidden", compound.enc_hidden},
      {"match_embed_dim", match.embed_dim},
      {"match_hidden", match.hidden},
      {"span_dim", match.span_dim},
      {"joint_dim", fusion.joint_dim},
      {"margin", match.margin},
      {"fusion_layers", fusion.layers},
      {"ffn_dim", fusion.ffn_dim},
      {"heads", fusion.heads},
      {"dropout", fusion.dropout},
      {"chunks", fusion.chunks},
      {"encodings_every_layer", fusion.encodings_every_layer},
      {"mask_missing", fusion.mask_missing},
      {"experts", experts},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.compound.sizes.nonterminals = j.at("nonterminals").get<int>();
  cfg.compound.sizes.preterminals = j.at("preterminals").get<int>();
  cfg.compound.z_dim = j.at("z_dim").get<int>();
  cfg.compound.embed_dim = j.at("embed_dim").get<int>();
  cfg.compound.enc_embed_dim = j.at("enc_embed_dim").get<int>();
  cfg.compound.enc_hidden = j.at("enc_hidden").get<int>();
  cfg.match.embed_dim = j.at("match_embed_dim").get<int>();
  cfg.match.hidden = j.at("match_hidden").get<int>();
  cfg.match.span_dim = j.at("span_dim").get<int>();
  cfg.fusion.joint_dim = j.at("joint_dim").get<int>();
  cfg.match.margin = j.at("margin").get<double>();
  cfg.fusion.layers = j.at("fusion_layers").get<int>();
  cfg.fusion.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.fusion.heads = j.at("heads").get<int>();
  cfg.fusion.dropout = j.at("dropout").get<double>();
  cfg.fusion.chunks = j.at("chunks").get<int>();
  cfg.fusion.encodings_every_layer = j.at("encodings_every_layer").get<bool>();
  cfg.fusion.mask_missing = j.at("mask_missing").get<bool>();
  std::vector<ExpertSpec> experts;
  for (const auto& e : j.at("experts")) {
    experts.push_back({e.at("name").get<std::string>(), e.at("raw_dim").get<int>(),
                       e.at("category").get<std::string>()});
  }
  cfg.finalize(j.at("vocab").get<int>(), experts);
  return cfg;
}

void register_model_params(const ModelConfig& cfg, ParamSet& ps) {
  register_compound_params(cfg.compound, ps);
  if (!cfg.grounded()) return;
  register_match_params(cfg.match, ps);
  if (cfg.variant == Variant::MmcPcfg) {
    register_fusion_params(cfg.fusion, ps);
  } else {
    // The single-expert path only ever reads the projection.
    const ExpertSpec& e = cfg.fusion.experts.front();
    ps.create("fusion.proj." + e.name + ".w", {e.raw_dim, cfg.fusion.joint_dim});
    ps.create("fusion.proj." + e.name + ".b", {1, cfg.fusion.joint_dim});
  }
}

PairOutputs model_forward(Graph& g, const ParamSet& ps, const ModelConfig& cfg,
                          const std::vector<int>& words, const VideoFeatures* vf,
                          Rng* zrng, bool with_matching) {
  PairOutputs out;
  const bool ground = cfg.grounded() && with_matching;
  out.parse = compound_forward(g, ps, cfg.compound, words, zrng, ground);
  if (!ground) return out;
  check(vf != nullptr, "model_forward: grounded variant needs video features");
  out.grounded = true;
  out.span = span_side(g, ps, cfg.match, words, out.parse.chart.label_marginals);
  if (cfg.variant == Variant::MmcPcfg)
    out.psi = fuse(g, ps, cfg.fusion, *vf);
  else
    out.psi = {image_video_rep(g, ps, cfg.fusion, *vf, 0)};
  return out;
}

ParseTree model_parse(const ParamSet& ps, const CompoundConfig& cfg,
                      const std::vector<int>& words) {
  Graph g(false);
  const PosteriorVars post = encode_posterior(g, ps, cfg, words);
  const RuleTensors rules = rule_probs(ps, cfg, g.value(post.mu));
  return viterbi_parse(rules, words);
}

}  // namespace gf
