#pragma once

// Flat key=value configuration files: '#' starts a comment, blank lines are
// ignored, later assignments win.  The CLI overlays flag values on top of
// the parsed file, so flags always take precedence.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gf/model.h"
#include "gf/trainer.h"

namespace gf {

class ConfigMap {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  // Comma-separated list; empty or missing -> empty vector.
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<uint64_t> get_u64_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

ConfigMap parse_config_text(const std::string& text, const std::string& origin);
ConfigMap parse_config_file(const std::string& path);

// Rejects keys outside the documented set (typo protection).
void check_known_keys(const ConfigMap& c);

// Builds the typed configs; architecture finalization (vocabulary size and
// expert list) happens later, once the data is known.
TrainConfig train_config_from(const ConfigMap& c);
ModelConfig model_config_from(const ConfigMap& c);

}  // namespace gf
