// Data plumbing: token normalization, vocabulary construction and hashing,
// bracketed-tree parsing with punctuation reindexing, the binary feature
// container, deterministic batching, and the synthetic generator's sampling
// statistics.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "gf/common.h"
#include "gf/dataio.h"
#include "gf/rng.h"

using namespace gf;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const std::string& name) {
  fs::path dir = fs::path(GF_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("punctuation detection and stripping") {
  CHECK(is_punctuation_token("."));
  CHECK(is_punctuation_token("..."));
  CHECK(is_punctuation_token("!?"));
  CHECK(is_punctuation_token("-LRB-"));
  CHECK(is_punctuation_token("``"));
  CHECK(is_punctuation_token("''"));
  CHECK_FALSE(is_punctuation_token("dog"));
  CHECK_FALSE(is_punctuation_token("don't"));
  CHECK_FALSE(is_punctuation_token("u.s."));
  CHECK_FALSE(is_punctuation_token(""));

  CHECK(strip_punctuation({"the", ",", "dog", "."}) ==
        std::vector<std::string>{"the", "dog"});
  CHECK(lowercase("The DOG") == "the dog");
}

TEST_CASE("vocabulary: frequency ranking, ties, unknown id 0, top-k cap") {
  std::vector<CorpusEntry> entries;
  CorpusEntry e;
  // "bb" x3, "aa" x2, "cc" x2, "dd" x1; ties break alphabetically.
  e.tokens = {"bb", "aa", "cc", "bb", "dd", "cc", "aa", "bb"};
  entries.push_back(e);

  const Vocab v = build_vocab(entries, {0}, 100);
  REQUIRE(v.words.size() == 5);
  CHECK(v.words[0] == "<unk>");
  CHECK(v.words[1] == "bb");
  CHECK(v.words[2] == "aa");
  CHECK(v.words[3] == "cc");
  CHECK(v.words[4] == "dd");

  CHECK(v.id("bb") == 1);
  CHECK(v.id("never-seen") == 0);
  CHECK(encode(v, {"dd", "xx", "aa"}) == std::vector<int>{4, 0, 2});

  const Vocab capped = build_vocab(entries, {0}, 2);
  REQUIRE(capped.words.size() == 3);  // <unk> + top 2
  CHECK(capped.words[1] == "bb");
  CHECK(capped.words[2] == "aa");
  CHECK(capped.id("dd") == 0);
}

TEST_CASE("vocabulary round trip and hash stability") {
  const fs::path dir = test_dir("vocab");
  std::vector<CorpusEntry> entries(1);
  entries[0].tokens = {"red", "green", "blue", "green"};
  const Vocab v = build_vocab(entries, {0}, 10);
  save_vocab((dir / "vocab.json").string(), v);
  const Vocab r = load_vocab((dir / "vocab.json").string());
  CHECK(r.words == v.words);
  CHECK(vocab_hash(r) == vocab_hash(v));

  Vocab other = v;
  other.words.push_back("extra");
  CHECK(vocab_hash(other) != vocab_hash(v));
}

TEST_CASE("gold tree parsing: labels, nesting, punctuation reindexing") {
  const GoldTree t =
      parse_gold_tree("(S (NP (DT the) (NN dog)) (VP (VBD ate) (NP (DT a) (NN bone))))", 1);
  CHECK(t.n == 5);
  CHECK(t.tokens == std::vector<std::string>{"the", "dog", "ate", "a", "bone"});
  // Full-sentence span excluded; remaining constituents: NP(0,1), VP(2,4), NP(3,4).
  REQUIRE(t.spans.size() == 3);
  CHECK(t.spans[0].span == Span{0, 1});
  CHECK(t.spans[0].label == "NP");
  CHECK(t.spans[1].span == Span{2, 4});
  CHECK(t.spans[1].label == "VP");
  CHECK(t.spans[2].span == Span{3, 4});
  CHECK(t.spans[2].label == "NP");

  // Punctuation leaves vanish and the spans re-index over the survivors.
  const GoldTree p = parse_gold_tree(
      "(S (NP (DT the) (NN dog)) (, ,) (VP (VBD ran) (ADVP (RB away))) (. .))", 2);
  CHECK(p.n == 4);
  CHECK(p.tokens == std::vector<std::string>{"the", "dog", "ran", "away"});
  REQUIRE(p.spans.size() == 2);
  CHECK(p.spans[0].span == Span{0, 1});
  CHECK(p.spans[1].span == Span{2, 3});
  CHECK(p.spans[1].label == "VP");

  // Tokens are lowercased like the corpus side.
  const GoldTree lc = parse_gold_tree("(S (NNP Alice) (VBD Ran))", 3);
  CHECK(lc.tokens == std::vector<std::string>{"alice", "ran"});

  // A single surviving leaf has no measurable spans.
  const GoldTree single = parse_gold_tree("(S (NN dog) (. .))", 4);
  CHECK(single.n == 1);
  CHECK(single.spans.empty());
}

TEST_CASE("gold tree parsing rejects malformed lines with the line number") {
  CHECK_THROWS_WITH_AS(parse_gold_tree("(S (NP broken", 7), doctest::Contains("line 7"),
                       input_error);
  CHECK_THROWS_AS(parse_gold_tree("", 1), input_error);
  CHECK_THROWS_AS(parse_gold_tree("(S)", 2), input_error);
  CHECK_THROWS_AS(parse_gold_tree("(S (NN dog)) trailing", 3), input_error);
}

TEST_CASE("gold tree file reading aligns line numbers") {
  const fs::path dir = test_dir("gold");
  {
    std::ofstream out(dir / "gold.txt");
    out << "(S (NN dogs) (VBP bark))\n";
    out << "\n";  // blank lines are skipped
    out << "(S (NP (DT a) (NN cat)) (VBD slept))\n";
  }
  const std::vector<GoldTree> trees = read_gold_trees((dir / "gold.txt").string());
  REQUIRE(trees.size() == 2);
  CHECK(trees[0].n == 2);
  CHECK(trees[1].n == 3);
  CHECK(trees[1].spans.size() == 1);
}

TEST_CASE("corpus round trip, normalization, and split fields") {
  const fs::path dir = test_dir("corpus");
  {
    std::ofstream out(dir / "corpus.jsonl");
    out << R"({"id": "a", "video_id": "v1", "tokens": ["The", "Dog", "."], "split": "train"})"
        << "\n";
    out << R"({"tokens": ["Hello", ",", "World"]})" << "\n";
  }
  const auto entries = read_corpus((dir / "corpus.jsonl").string());
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].tokens == std::vector<std::string>{"the", "dog"});
  CHECK(entries[0].video_id == "v1");
  CHECK(entries[1].id == "line2");
  CHECK(entries[1].split == "train");  // default
  CHECK(entries[1].tokens == std::vector<std::string>{"hello", "world"});

  write_corpus((dir / "copy.jsonl").string(), entries);
  const auto again = read_corpus((dir / "copy.jsonl").string());
  REQUIRE(again.size() == entries.size());
  CHECK(again[0].tokens == entries[0].tokens);
  CHECK(again[1].split == entries[1].split);

  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{not json}\n";
  }
  CHECK_THROWS_AS(read_corpus((dir / "bad.jsonl").string()), input_error);
  CHECK_THROWS_AS(read_corpus((dir / "missing.jsonl").string()), input_error);
}

TEST_CASE("training indices honor the length window") {
  std::vector<CorpusEntry> entries(4);
  entries[0].tokens = std::vector<std::string>(5, "w");
  entries[0].split = "train";
  entries[1].tokens = std::vector<std::string>(25, "w");  // too long
  entries[1].split = "train";
  entries[2].tokens = {"w"};  // too short
  entries[2].split = "train";
  entries[3].tokens = {"w", "w"};
  entries[3].split = "test";  // wrong split
  CHECK(training_indices(entries, 20) == std::vector<int>{0});
}

TEST_CASE("feature container round trip with missing experts") {
  const fs::path dir = test_dir("features");
  const std::vector<ExpertSpec> experts = {{"obj", 3, "object"}, {"aud", 2, "other"}};

  VideoFeatures a;
  a.streams = {{1, 2, 3, 4, 5, 6}, {0.5f, -0.5f}};
  a.lengths = {2, 1};
  VideoFeatures b;  // aud missing
  b.streams = {{9, 8, 7}, {}};
  b.lengths = {1, 0};

  const std::string path = (dir / "feat.gff").string();
  write_features(path, experts, {{"vidA", a}, {"vidB", b}});

  const FeatureStore store = load_features(path);
  REQUIRE(store.experts.size() == 2);
  CHECK(store.experts[0].name == "obj");
  CHECK(store.experts[0].raw_dim == 3);
  CHECK(store.experts[1].category == "other");
  CHECK(store.video_ids() == std::vector<std::string>{"vidA", "vidB"});
  CHECK(store.has("vidA"));
  CHECK_FALSE(store.has("nope"));

  const VideoFeatures ra = store.get("vidA");
  CHECK(ra.lengths == std::vector<int>{2, 1});
  CHECK(ra.streams[0] == a.streams[0]);
  CHECK(ra.streams[1] == a.streams[1]);

  const VideoFeatures rb = store.get("vidB");
  CHECK(rb.lengths == std::vector<int>{1, 0});
  CHECK(rb.streams[1].empty());

  // Corrupting the payload trips the stored hash.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-4, std::ios::end);
    const float junk = 123.0f;
    f.write(reinterpret_cast<const char*>(&junk), sizeof junk);
  }
  CHECK_THROWS(load_features(path));
}

TEST_CASE("stream selection reorders features onto a subset of experts") {
  const std::vector<ExpertSpec> have = {
      {"obj", 2, "object"}, {"act", 2, "action"}, {"aud", 1, "other"}};
  VideoFeatures vf;
  vf.streams = {{1, 2, 3, 4}, {5, 6}, {7}};
  vf.lengths = {2, 1, 1};

  const VideoFeatures sub =
      select_streams(vf, have, {{"aud", 1, "other"}, {"obj", 2, "object"}});
  REQUIRE(sub.streams.size() == 2);
  CHECK(sub.lengths == std::vector<int>{1, 2});
  CHECK(sub.streams[0] == std::vector<float>{7});
  CHECK(sub.streams[1] == std::vector<float>{1, 2, 3, 4});

  const VideoFeatures same = select_streams(vf, have, have);
  CHECK(same.streams == vf.streams);
  CHECK(same.lengths == vf.lengths);

  CHECK_THROWS_WITH_AS(select_streams(vf, have, {{"scene", 2, "scene"}}),
                       doctest::Contains("'scene'"), input_error);
  CHECK_THROWS_WITH_AS(select_streams(vf, have, {{"obj", 3, "object"}}),
                       doctest::Contains("dimension"), input_error);
}

TEST_CASE("batching is a seeded permutation with the singleton tail merged") {
  std::vector<int> idx(33);
  for (int i = 0; i < 33; ++i) idx[i] = i * 2;

  const auto batches = make_batches(idx, 16, 9);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 16);
  CHECK(batches[1].size() == 17);  // 33 = 16 + 16 + 1; the tail merges back

  std::multiset<int> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen == std::multiset<int>(idx.begin(), idx.end()));

  CHECK(make_batches(idx, 16, 9) == batches);          // same seed, same order
  CHECK(make_batches(idx, 16, 10) != batches);         // different seed
  CHECK(make_batches({1, 2, 3}, 16, 0).size() == 1);   // single short batch
  CHECK(make_batches({1}, 16, 0).size() == 1);         // lone sentence stays
}

TEST_CASE("synthetic grammar normalizes and its samples match the rule table") {
  const SynthGrammar g = synth_grammar();
  CHECK(g.rules.max_normalization_error() < 1e-12);
  CHECK(g.nonterminals.size() == 4);
  CHECK(g.preterminals.size() == 5);
  CHECK(g.rules.sizes.vocab == static_cast<int>(g.vocab.size()));

  // Empirical conditional frequencies of binary expansions vs probabilities.
  // Sampled with a budget far beyond any realistic derivation: a tight
  // budget rejects long sentences, which biases the recursive rules down.
  const int S = g.rules.sizes.symbols();
  std::vector<uint64_t> counts(static_cast<size_t>(g.rules.sizes.nonterminals) * S * S, 0);
  Rng rng(123);
  int accepted = 0;
  while (accepted < 20000) {
    std::vector<uint64_t> one(counts.size(), 0);
    if (!synth_sample(g, rng, 4000, nullptr, nullptr, &one)) continue;
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += one[i];
    ++accepted;
  }
  for (int a = 0; a < g.rules.sizes.nonterminals; ++a) {
    uint64_t parent_total = 0;
    for (int p = 0; p < S * S; ++p)
      parent_total += counts[static_cast<size_t>(a) * S * S + p];
    REQUIRE(parent_total > 0);
    for (int p = 0; p < S * S; ++p) {
      const double freq =
          static_cast<double>(counts[static_cast<size_t>(a) * S * S + p]) / parent_total;
      const double prob = std::exp(g.rules.binary[static_cast<size_t>(a) * S * S + p]);
      const double expect = prob < 1e-20 ? 0.0 : prob;
      INFO("parent ", a, " pair ", p);
      CHECK(std::abs(freq - expect) < 0.01);
    }
  }
}

TEST_CASE("synthetic corpus: alignment, splits, features, and files") {
  const SynthData d = synth_corpus(60, 5, 0.1, 20);
  REQUIRE(d.entries.size() == 60);
  REQUIRE(d.trees.size() == 60);
  CHECK(d.experts.size() == 3);

  int train = 0, val = 0, test = 0;
  for (size_t i = 0; i < d.entries.size(); ++i) {
    const CorpusEntry& e = d.entries[i];
    CHECK(static_cast<int>(e.tokens.size()) == d.trees[i].n);
    CHECK(e.tokens.size() >= 3);
    CHECK(e.tokens.size() < 20);
    train += e.split == "train";
    val += e.split == "val";
    test += e.split == "test";
    for (const std::string& t : e.tokens)
      CHECK(std::find(d.grammar.vocab.begin(), d.grammar.vocab.end(), t) !=
            d.grammar.vocab.end());
  }
  CHECK(train == 48);
  CHECK(val == 6);
  CHECK(test == 6);
  REQUIRE(d.features.size() == 60);

  const fs::path dir = test_dir("synth");
  write_synth_dataset(dir.string(), d);
  const auto entries = read_corpus((dir / "corpus.jsonl").string());
  const auto trees = read_gold_trees((dir / "gold.txt").string());
  REQUIRE(entries.size() == 60);
  REQUIRE(trees.size() == 60);
  for (size_t i = 0; i < entries.size(); ++i) {
    CHECK(entries[i].tokens == d.entries[i].tokens);
    CHECK(trees[i].n == d.trees[i].n);
    REQUIRE(trees[i].spans.size() == d.trees[i].spans.size());
    for (size_t s = 0; s < trees[i].spans.size(); ++s) {
      CHECK(trees[i].spans[s].span == d.trees[i].spans[s].span);
      CHECK(trees[i].spans[s].label == d.trees[i].spans[s].label);
    }
  }
  const FeatureStore store = load_features((dir / "features.gff").string());
  for (const CorpusEntry& e : entries) CHECK(store.has(e.video_id));

  // Same seed, same corpus.
  const SynthData d2 = synth_corpus(60, 5, 0.1, 20);
  CHECK(d2.entries[11].tokens == d.entries[11].tokens);
  const SynthData d3 = synth_corpus(60, 6, 0.1, 20);
  bool any_differs = false;
  for (size_t i = 0; i < d3.entries.size() && !any_differs; ++i)
    any_differs = d3.entries[i].tokens != d.entries[i].tokens;
  CHECK(any_differs);
}
