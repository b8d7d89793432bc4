// Flat key=value config files: parsing with comments and later-wins
// semantics, typed accessors with precise diagnostics, unknown-key
// protection, and the mapping onto the training and model configs.

#include <doctest.h>

#include <string>
#include <vector>

#include "gf/common.h"
#include "gf/config.h"

using namespace gf;

TEST_CASE("parsing handles comments, blanks, padding, and later-wins") {
  const ConfigMap c = parse_config_text(
      "# a full-line comment\n"
      "\n"
      "  lr = 0.5   # trailing comment\n"
      "batch=4\n"
      "name = first\n"
      "name = second\n"
      "empty =\n",
      "unit.conf");
  CHECK(c.get_double("lr", 0.0) == 0.5);
  CHECK(c.get_int("batch", 0) == 4);
  CHECK(c.get_str("name", "") == "second");
  CHECK(c.get_str("empty", "fallback") == "");
  CHECK(c.get_str("missing", "fallback") == "fallback");
  CHECK(c.has("lr"));
  CHECK(!c.has("missing"));
}

TEST_CASE("parse errors carry the origin and line number") {
  CHECK_THROWS_WITH_AS(parse_config_text("lr = 1\nnot a pair\n", "f.conf"),
                       doctest::Contains("f.conf:2"), input_error);
  CHECK_THROWS_WITH_AS(parse_config_text("= 3\n", "g.conf"),
                       doctest::Contains("g.conf:1"), input_error);
}

TEST_CASE("boolean values accept the usual spellings") {
  ConfigMap c;
  for (const char* v : {"1", "true", "Yes", "ON"}) {
    c.set("flag", v);
    CHECK(c.get_bool("flag", false));
  }
  for (const char* v : {"0", "false", "No", "off"}) {
    c.set("flag", v);
    CHECK(!c.get_bool("flag", true));
  }
  c.set("flag", "maybe");
  CHECK_THROWS_WITH_AS(c.get_bool("flag", false), doctest::Contains("not a boolean"),
                       input_error);
  CHECK(c.get_bool("absent", true));
  CHECK(!c.get_bool("absent", false));
}

TEST_CASE("numeric accessors reject junk and name the key") {
  ConfigMap c;
  c.set("batch", "12");
  c.set("lr", "2.5e-3");
  CHECK(c.get_int("batch", 0) == 12);
  CHECK(c.get_double("lr", 0.0) == 2.5e-3);

  c.set("batch", "12x");
  CHECK_THROWS_WITH_AS(c.get_int("batch", 0), doctest::Contains("'batch'"), input_error);
  c.set("lr", "fast");
  CHECK_THROWS_WITH_AS(c.get_double("lr", 0.0), doctest::Contains("not a number"),
                       input_error);
  CHECK(c.get_int("absent", 7) == 7);
  CHECK(c.get_double("absent", 1.5) == 1.5);
}

TEST_CASE("list accessors split on commas and trim") {
  ConfigMap c;
  c.set("experts", " obj , act ,aud ");
  const std::vector<std::string> want = {"obj", "act", "aud"};
  CHECK(c.get_list("experts") == want);
  CHECK(c.get_list("absent").empty());

  c.set("seeds", "1, 22 ,333");
  const std::vector<uint64_t> su = {1, 22, 333};
  CHECK(c.get_u64_list("seeds") == su);
  c.set("seeds", "1,two");
  CHECK_THROWS_WITH_AS(c.get_u64_list("seeds"), doctest::Contains("'two'"), input_error);
}

TEST_CASE("unknown keys are rejected by name") {
  ConfigMap ok = parse_config_text("lr = 0.1\nvariant = c-pcfg\nseeds = 1,2\n", "t");
  check_known_keys(ok);

  ConfigMap bad = parse_config_text("learning_rate = 0.1\n", "t");
  CHECK_THROWS_WITH_AS(check_known_keys(bad),
                       doctest::Contains("unknown config key 'learning_rate'"),
                       input_error);
}

TEST_CASE("training config mapping with defaults and overrides") {
  const TrainConfig def = train_config_from(ConfigMap{});
  CHECK(def.lr == 0.001);
  CHECK(def.beta1 == 0.75);
  CHECK(def.beta2 == 0.999);
  CHECK(def.alpha == 1.0);
  CHECK(def.clip_norm == 5.0);
  CHECK(def.batch == 16);
  CHECK(def.epochs == 10);
  CHECK(def.max_len == 20);

  const ConfigMap c = parse_config_text(
      "lr = 0.01\nalpha = 0.5\nbatch = 8\nepochs = 3\nseeds = 5,6\nexperts = obj,aud\n",
      "t");
  const TrainConfig tc = train_config_from(c);
  CHECK(tc.lr == 0.01);
  CHECK(tc.alpha == 0.5);
  CHECK(tc.batch == 8);
  CHECK(tc.epochs == 3);
  const std::vector<uint64_t> seeds = {5, 6};
  CHECK(tc.seeds == seeds);
  const std::vector<std::string> experts = {"obj", "aud"};
  CHECK(tc.experts == experts);

  CHECK_THROWS_WITH_AS(train_config_from(parse_config_text("seeds =\n", "t")),
                       doctest::Contains("no seeds"), input_error);
  CHECK_THROWS_AS(train_config_from(parse_config_text("lr = -1\n", "t")), input_error);
}

TEST_CASE("model config mapping with defaults and overrides") {
  const ModelConfig def = model_config_from(ConfigMap{});
  CHECK(def.variant == Variant::MmcPcfg);
  CHECK(def.compound.sizes.nonterminals == 30);
  CHECK(def.compound.sizes.preterminals == 60);
  CHECK(def.compound.z_dim == 64);
  CHECK(def.fusion.layers == 2);
  CHECK(def.fusion.heads == 8);
  CHECK(def.fusion.encodings_every_layer);
  CHECK(!def.fusion.mask_missing);

  const ConfigMap c = parse_config_text(
      "variant = vc-pcfg\n"
      "nonterminals = 4\n"
      "preterminals = 5\n"
      "z_dim = 8\n"
      "joint_dim = 32\n"
      "margin = 0.4\n"
      "fusion_layers = 1\n"
      "heads = 2\n"
      "encodings_every_layer = false\n"
      "mask_missing = yes\n",
      "t");
  const ModelConfig mc = model_config_from(c);
  CHECK(mc.variant == Variant::VcPcfg);
  CHECK(mc.compound.sizes.nonterminals == 4);
  CHECK(mc.compound.sizes.preterminals == 5);
  CHECK(mc.compound.z_dim == 8);
  CHECK(mc.fusion.joint_dim == 32);
  CHECK(mc.match.margin == 0.4);
  CHECK(mc.fusion.layers == 1);
  CHECK(mc.fusion.heads == 2);
  CHECK(!mc.fusion.encodings_every_layer);
  CHECK(mc.fusion.mask_missing);

  CHECK_THROWS_AS(model_config_from(parse_config_text("variant = pcfg\n", "t")),
                  input_error);
}
