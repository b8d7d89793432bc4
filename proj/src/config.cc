#include "gf/config.h"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "gf/common.h"
#include "gf/dataio.h"

namespace gf {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

std::string ConfigMap::get_str(const std::string& key, const std::string& def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

int ConfigMap::get_int(const std::string& key, int def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  fail_input("config key '", key, "': '", it->second, "' is not an integer");
}

double ConfigMap::get_double(const std::string& key, double def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  fail_input("config key '", key, "': '", it->second, "' is not a number");
}

bool ConfigMap::get_bool(const std::string& key, bool def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string v = lowercase(it->second);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail_input("config key '", key, "': '", it->second, "' is not a boolean");
}

std::vector<std::string> ConfigMap::get_list(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return {};
  return split_commas(it->second);
}

std::vector<uint64_t> ConfigMap::get_u64_list(const std::string& key) const {
  std::vector<uint64_t> out;
  for (const std::string& part : get_list(key)) {
    bool ok = false;
    try {
      size_t pos = 0;
      const uint64_t v = std::stoull(part, &pos);
      if (pos == part.size()) {
        out.push_back(v);
        ok = true;
      }
    } catch (const std::exception&) {
    }
    if (!ok) fail_input("config key '", key, "': '", part, "' is not an unsigned integer");
  }
  return out;
}

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    check_input(eq != std::string::npos, origin, ":", lineno,
                ": expected key = value, got '", line, "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check_input(!key.empty(), origin, ":", lineno, ": empty key");
    c.set(key, value);
  }
  return c;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_input(in.good(), "cannot open config file '", path, "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void check_known_keys(const ConfigMap& c) {
  static const std::unordered_set<std::string> known = {
      // training
      "lr", "beta1", "beta2", "adam_eps", "alpha", "clip_norm", "batch", "epochs",
      "max_len", "seeds", "experts", "vocab_top_k",
      // model
      "variant", "nonterminals", "preterminals", "z_dim", "embed_dim",
      "enc_embed_dim", "enc_hidden", "match_embed_dim", "match_hidden", "span_dim",
      "joint_dim", "margin", "fusion_layers", "ffn_dim", "heads", "dropout",
      "chunks", "encodings_every_layer", "mask_missing",
  };
  for (const auto& [key, value] : c.values())
    check_input(known.count(key) != 0, "unknown config key '", key, "'");
}

TrainConfig train_config_from(const ConfigMap& c) {
  TrainConfig tc;
  tc.lr = c.get_double("lr", tc.lr);
  tc.beta1 = c.get_double("beta1", tc.beta1);
  tc.beta2 = c.get_double("beta2", tc.beta2);
  tc.adam_eps = c.get_double("adam_eps", tc.adam_eps);
  tc.alpha = c.get_double("alpha", tc.alpha);
  tc.clip_norm = c.get_double("clip_norm", tc.clip_norm);
  tc.batch = c.get_int("batch", tc.batch);
  tc.epochs = c.get_int("epochs", tc.epochs);
  tc.max_len = c.get_int("max_len", tc.max_len);
  if (c.has("seeds")) {
    tc.seeds = c.get_u64_list("seeds");
    check_input(!tc.seeds.empty(), "config key 'seeds' lists no seeds");
  }
  tc.experts = c.get_list("experts");
  tc.validate();
  return tc;
}

ModelConfig model_config_from(const ConfigMap& c) {
  ModelConfig mc;
  mc.variant = variant_from_string(c.get_str("variant", "mmc-pcfg"));
  mc.compound.sizes.nonterminals = c.get_int("nonterminals", mc.compound.sizes.nonterminals);
  mc.compound.sizes.preterminals = c.get_int("preterminals", mc.compound.sizes.preterminals);
  mc.compound.z_dim = c.get_int("z_dim", mc.compound.z_dim);
  mc.compound.embed_dim = c.get_int("embed_dim", mc.compound.embed_dim);
  mc.compound.enc_embed_dim = c.get_int("enc_embed_dim", mc.compound.enc_embed_dim);
  mc.compound.enc_hidden = c.get_int("enc_hidden", mc.compound.enc_hidden);
  mc.match.embed_dim = c.get_int("match_embed_dim", mc.match.embed_dim);
  mc.match.hidden = c.get_int("match_hidden", mc.match.hidden);
  mc.match.span_dim = c.get_int("span_dim", mc.match.span_dim);
  mc.match.margin = c.get_double("margin", mc.match.margin);
  mc.fusion.joint_dim = c.get_int("joint_dim", mc.fusion.joint_dim);
  mc.fusion.layers = c.get_int("fusion_layers", mc.fusion.layers);
  mc.fusion.ffn_dim = c.get_int("ffn_dim", mc.fusion.ffn_dim);
  mc.fusion.heads = c.get_int("heads", mc.fusion.heads);
  mc.fusion.dropout = c.get_double("dropout", mc.fusion.dropout);
  mc.fusion.chunks = c.get_int("chunks", mc.fusion.chunks);
  mc.fusion.encodings_every_layer =
      c.get_bool("encodings_every_layer", mc.fusion.encodings_every_layer);
  mc.fusion.mask_missing = c.get_bool("mask_missing", mc.fusion.mask_missing);
  return mc;
}

}  // namespace gf
