#pragma once

// Corpus, vocabulary, gold-tree, and feature-container ingestion, plus a
// synthetic corpus generator used for desk-scale end-to-end runs.
//
// File formats:
//   corpus       JSON lines: {"id": ..., "video_id": ..., "tokens": [...],
//                "split": "train"|"val"|"test"}
//   gold trees   bracketed text, one tree per line, aligned with the corpus
//                file by line order
//   vocabulary   JSON: {"words": [...]} with the unknown token at id 0
//   features     binary container: magic "GFFEAT1\n", little-endian u64
//                header length, JSON header (expert table, per-video float
//                offsets/counts, payload hash), float32 payload

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gf/chart.h"
#include "gf/fusion.h"
#include "gf/rng.h"
#include "gf/tree.h"

namespace gf {

struct CorpusEntry {
  std::string id;
  std::string video_id;
  std::vector<std::string> tokens;  // lowercased, punctuation removed
  std::string split;
};

// ---- tokens & punctuation ----

// A token is punctuation when every byte is ASCII punctuation, or when it is
// one of the bracket/quote aliases common in treebank text.
bool is_punctuation_token(const std::string& token);
std::vector<std::string> strip_punctuation(const std::vector<std::string>& tokens);
std::string lowercase(const std::string& s);

// ---- corpus ----

std::vector<CorpusEntry> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusEntry>& entries);

// Training subset honoring the length cutoff (tokens < 20, >= 2).
std::vector<int> training_indices(const std::vector<CorpusEntry>& entries,
                                  int max_len = 20);

// ---- vocabulary ----

struct Vocab {
  std::vector<std::string> words;  // id -> word; words[0] is the unknown token
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(words.size()); }
  int id(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? 0 : it->second;
  }
};

Vocab build_vocab(const std::vector<CorpusEntry>& entries,
                  const std::vector<int>& train_idx, int top_k = 2000);
void save_vocab(const std::string& path, const Vocab& v);
Vocab load_vocab(const std::string& path);
std::vector<int> encode(const Vocab& v, const std::vector<std::string>& tokens);
// FNV-1a over the id-ordered word list; checkpoints carry it so a parse with
// the wrong vocabulary is rejected instead of silently mis-encoding.
uint64_t vocab_hash(const Vocab& v);

// ---- gold trees ----

struct LabeledSpan {
  Span span;
  std::string label;
};

struct GoldTree {
  int n = 0;                       // tokens after punctuation removal
  std::vector<std::string> tokens;
  std::vector<LabeledSpan> spans;  // width >= 2, full-sentence span excluded
};

// Bracketed trees, one per line; spans are re-indexed over the
// punctuation-free leaf sequence.
std::vector<GoldTree> read_gold_trees(const std::string& path);
GoldTree parse_gold_tree(const std::string& line, int line_number);

// ---- feature container ----

extern const std::unordered_map<std::string, int> kKnownExpertDims;

struct FeatureStore {
  std::vector<ExpertSpec> experts;
  std::unordered_map<std::string, std::vector<std::pair<int64_t, int>>> layout;
  std::vector<float> payload;

  bool has(const std::string& video_id) const { return layout.count(video_id) != 0; }
  // Missing experts come back with length 0 and an empty block.
  VideoFeatures get(const std::string& video_id) const;
  std::vector<std::string> video_ids() const;  // sorted
};

void write_features(const std::string& path, const std::vector<ExpertSpec>& experts,
                    const std::vector<std::pair<std::string, VideoFeatures>>& videos);
FeatureStore load_features(const std::string& path);

// Reorders `vf` (whose streams follow `have`) onto the `want` expert list,
// so a model trained on an expert subset sees exactly its own streams.
VideoFeatures select_streams(const VideoFeatures& vf, const std::vector<ExpertSpec>& have,
                             const std::vector<ExpertSpec>& want);

// ---- batching ----

// Seed-deterministic shuffle into batches of `batch` entries; a final batch
// of size 1 is merged into its predecessor.
std::vector<std::vector<int>> make_batches(const std::vector<int>& indices, int batch,
                                           uint64_t seed);

// ---- synthetic corpus ----

struct SynthGrammar {
  std::vector<std::string> nonterminals;
  std::vector<std::string> preterminals;
  std::vector<std::string> vocab;
  RuleTensors rules;  // log probabilities, the actual generator
};

// The fixed desk-scale generator grammar.
SynthGrammar synth_grammar();

// Samples one derivation (false when the length budget is exceeded; callers
// reject and retry).  `binary_counts`, when given, must have N*S*S entries
// and accumulates binary-rule usage for sampling-statistics checks.
bool synth_sample(const SynthGrammar& g, Rng& rng, int max_len,
                  std::vector<std::string>* tokens, std::string* ptb,
                  std::vector<uint64_t>* binary_counts);

struct SynthData {
  SynthGrammar grammar;
  std::vector<CorpusEntry> entries;
  std::vector<GoldTree> trees;  // aligned with entries
  std::vector<ExpertSpec> experts;
  std::vector<std::pair<std::string, VideoFeatures>> features;
};

// Samples sentences from the generator (rejecting lengths outside
// [3, max_len)), keeps the true derivations as gold trees, and fabricates
// per-expert features from content-word prototypes plus Gaussian noise.
SynthData synth_corpus(int n_sentences, uint64_t seed, double feature_noise = 0.1,
                       int max_len = 20);

// Writes corpus/gold/features/vocab files for the CLI into `dir`.
void write_synth_dataset(const std::string& dir, const SynthData& data);

}  // namespace gf
