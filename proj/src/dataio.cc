#include "gf/dataio.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gf/checkpoint.h"
#include "gf/common.h"
#include "gf/rng.h"

namespace gf {

using nlohmann::json;

// ---- tokens & punctuation ----

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_punctuation_token(const std::string& token) {
  if (token.empty()) return false;
  static const std::unordered_set<std::string> aliases = {
      "-lrb-", "-rrb-", "-lsb-", "-rsb-", "-lcb-", "-rcb-", "``", "''"};
  if (aliases.count(lowercase(token)) != 0) return true;
  for (unsigned char c : token)
    if (!std::ispunct(c)) return false;
  return true;
}

std::vector<std::string> strip_punctuation(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens)
    if (!is_punctuation_token(t)) out.push_back(t);
  return out;
}

// ---- corpus ----

std::vector<CorpusEntry> read_corpus(const std::string& path) {
  std::ifstream in(path);
  check_input(in.good(), "cannot open corpus file ", path);
  std::vector<CorpusEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_input(path, ":", line_no, ": invalid JSON: ", e.what());
    }
    CorpusEntry e;
    check_input(j.contains("tokens") && j["tokens"].is_array(), path, ":", line_no,
                ": entry lacks a tokens array");
    if (!j.contains("id"))
      e.id = "line" + std::to_string(line_no);
    else
      e.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    e.video_id = j.value("video_id", "");
    e.split = j.value("split", "train");
    std::vector<std::string> raw;
    for (const auto& t : j["tokens"]) {
      check_input(t.is_string(), path, ":", line_no, ": non-string token");
      raw.push_back(lowercase(t.get<std::string>()));
    }
    e.tokens = strip_punctuation(raw);
    check_input(!e.tokens.empty(), path, ":", line_no,
                ": entry has no tokens after punctuation removal");
    entries.push_back(std::move(e));
  }
  check_input(!entries.empty(), "corpus file ", path, " holds no entries");
  return entries;
}

void write_corpus(const std::string& path, const std::vector<CorpusEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "cannot write corpus file ", path);
  for (const CorpusEntry& e : entries) {
    json j;
    j["id"] = e.id;
    j["video_id"] = e.video_id;
    j["tokens"] = e.tokens;
    j["split"] = e.split;
    out << j.dump() << "\n";
  }
  check(out.good(), "write failed for corpus file ", path);
}

std::vector<int> training_indices(const std::vector<CorpusEntry>& entries, int max_len) {
  std::vector<int> idx;
  for (size_t i = 0; i < entries.size(); ++i) {
    const CorpusEntry& e = entries[i];
    const int n = static_cast<int>(e.tokens.size());
    if (e.split == "train" && n >= 2 && n < max_len) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

// ---- vocabulary ----

Vocab build_vocab(const std::vector<CorpusEntry>& entries, const std::vector<int>& train_idx,
                  int top_k) {
  check_input(!train_idx.empty(), "vocabulary requested over an empty training set");
  std::unordered_map<std::string, int64_t> freq;
  for (int i : train_idx)
    for (const std::string& t : entries[static_cast<size_t>(i)].tokens) ++freq[t];
  std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<size_t>(top_k));

  Vocab v;
  v.words.push_back("<unk>");
  for (const auto& [word, count] : ranked) v.words.push_back(word);
  for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
  return v;
}

void save_vocab(const std::string& path, const Vocab& v) {
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "cannot write vocabulary file ", path);
  json j;
  j["words"] = v.words;
  out << j.dump(2) << "\n";
  check(out.good(), "write failed for vocabulary file ", path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  check_input(in.good(), "cannot open vocabulary file ", path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail_input("vocabulary file ", path, " is not valid JSON: ", e.what());
  }
  check_input(j.contains("words") && j["words"].is_array() && !j["words"].empty(),
              "vocabulary file ", path, " lacks a words array");
  Vocab v;
  for (const auto& w : j["words"]) v.words.push_back(w.get<std::string>());
  for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
  return v;
}

std::vector<int> encode(const Vocab& v, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(v.id(t));
  return ids;
}

uint64_t vocab_hash(const Vocab& v) {
  std::string joined;
  for (const std::string& w : v.words) {
    joined += w;
    joined += '\n';
  }
  return fnv1a64(joined.data(), joined.size());
}

// ---- gold trees ----

namespace {

struct RawNode {
  std::string label;
  std::string token;  // leaves only
  std::vector<RawNode> children;
  bool leaf() const { return children.empty(); }
};

struct TreeParser {
  const std::string& text;
  size_t pos = 0;
  int line_no;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  [[noreturn]] void bail(const std::string& why) {
    fail_input("gold tree line ", line_no, ": ", why);
  }

  std::string read_atom() {
    size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    return text.substr(start, pos - start);
  }

  RawNode parse_node() {
    skip_ws();
    if (pos >= text.size()) bail("unexpected end of line (unbalanced brackets)");
    if (text[pos] != '(') {
      RawNode leaf;
      leaf.token = read_atom();
      if (leaf.token.empty()) bail("stray ')' or empty token");
      return leaf;
    }
    ++pos;  // consume '('
    RawNode node;
    skip_ws();
    if (pos < text.size() && text[pos] != '(' && text[pos] != ')')
      node.label = read_atom();
    skip_ws();
    while (pos < text.size() && text[pos] != ')') {
      node.children.push_back(parse_node());
      skip_ws();
    }
    if (pos >= text.size()) bail("missing ')' (unbalanced brackets)");
    ++pos;  // consume ')'
    if (node.children.empty()) bail("category '" + node.label + "' has no children");
    return node;
  }
};

std::string base_label(const std::string& label) {
  if (label.empty()) return label;
  const size_t cut = label.find_first_of("-=|");
  return cut == 0 || cut == std::string::npos ? label : label.substr(0, cut);
}

// Returns the [first, last] retained-leaf range under `node`, or (-1, -1) if
// the subtree holds only punctuation.
std::pair<int, int> collect_spans(const RawNode& node, GoldTree* out) {
  if (node.leaf()) {
    if (is_punctuation_token(lowercase(node.token))) return {-1, -1};
    const int idx = static_cast<int>(out->tokens.size());
    out->tokens.push_back(lowercase(node.token));
    return {idx, idx};
  }
  int first = -1, last = -1;
  for (const RawNode& child : node.children) {
    const auto [cf, cl] = collect_spans(child, out);
    if (cf < 0) continue;
    if (first < 0) first = cf;
    last = cl;
  }
  if (first >= 0 && last > first)
    out->spans.push_back({{first, last}, base_label(node.label)});
  return {first, last};
}

}  // namespace

GoldTree parse_gold_tree(const std::string& line, int line_number) {
  TreeParser parser{line, 0, line_number};
  RawNode root = parser.parse_node();
  parser.skip_ws();
  check_input(parser.pos == line.size(), "gold tree line ", line_number,
              ": trailing text after the closing bracket");

  GoldTree tree;
  collect_spans(root, &tree);
  tree.n = static_cast<int>(tree.tokens.size());
  check_input(tree.n >= 1, "gold tree line ", line_number,
              ": no tokens after punctuation removal");

  // Deduplicate (keep the outermost label) and drop the sentence-level span.
  // collect_spans pushes children before parents, so walk back to front.
  std::vector<LabeledSpan> keep;
  std::vector<char> seen(static_cast<size_t>(span_cell_count(std::max(tree.n, 2))), 0);
  for (auto it = tree.spans.rbegin(); it != tree.spans.rend(); ++it) {
    if (it->span.i == 0 && it->span.j == tree.n - 1) continue;
    char& flag = seen[static_cast<size_t>(span_cell_index(tree.n, it->span.i, it->span.j))];
    if (flag) continue;
    flag = 1;
    keep.push_back(*it);
  }
  std::sort(keep.begin(), keep.end(),
            [](const LabeledSpan& a, const LabeledSpan& b) { return a.span < b.span; });
  tree.spans = std::move(keep);
  return tree;
}

std::vector<GoldTree> read_gold_trees(const std::string& path) {
  std::ifstream in(path);
  check_input(in.good(), "cannot open gold tree file ", path);
  std::vector<GoldTree> trees;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    trees.push_back(parse_gold_tree(line, line_no));
  }
  check_input(!trees.empty(), "gold tree file ", path, " holds no trees");
  return trees;
}

// ---- feature container ----

const std::unordered_map<std::string, int> kKnownExpertDims = {
    {"resnext", 1000}, {"senet", 1000}, {"i3d", 400},   {"r2p1d", 359},
    {"s3dg", 512},     {"scene", 365},  {"audio", 128}, {"ocr", 300},
    {"face", 512},     {"speech", 300},
};

namespace {

constexpr char kFeatureMagic[8] = {'G', 'F', 'F', 'E', 'A', 'T', '1', '\n'};

void check_known_dim(const ExpertSpec& e) {
  auto it = kKnownExpertDims.find(lowercase(e.name));
  if (it != kKnownExpertDims.end())
    check_input(e.raw_dim == it->second, "expert '", e.name, "' declares dimension ",
                e.raw_dim, " but this expert type is ", it->second, "-dimensional");
}

}  // namespace

void write_features(const std::string& path, const std::vector<ExpertSpec>& experts,
                    const std::vector<std::pair<std::string, VideoFeatures>>& videos) {
  check_input(!experts.empty(), "feature container needs at least one expert");
  for (const ExpertSpec& e : experts) check_known_dim(e);

  json header;
  header["format"] = "gf-features-v1";
  json expert_list = json::array();
  for (const ExpertSpec& e : experts)
    expert_list.push_back({{"name", e.name}, {"category", e.category}, {"dim", e.raw_dim}});
  header["experts"] = expert_list;

  std::vector<float> payload;
  json vids = json::object();
  for (const auto& [video_id, vf] : videos) {
    check_input(vf.streams.size() == experts.size() && vf.lengths.size() == experts.size(),
                "video '", video_id, "' carries ", vf.streams.size(),
                " streams, container declares ", experts.size());
    json per = json::object();
    for (size_t m = 0; m < experts.size(); ++m) {
      const int frames = vf.lengths[m];
      if (frames == 0) continue;
      const size_t want = static_cast<size_t>(frames) * experts[m].raw_dim;
      check_input(vf.streams[m].size() == want, "video '", video_id, "' expert '",
                  experts[m].name, "': ", vf.streams[m].size(), " values for ", frames,
                  " frames of width ", experts[m].raw_dim);
      per[experts[m].name] = {{"offset", payload.size()}, {"frames", frames}};
      payload.insert(payload.end(), vf.streams[m].begin(), vf.streams[m].end());
    }
    vids[video_id] = per;
  }
  header["videos"] = vids;
  container::write_file(path, kFeatureMagic, header, payload);
}

FeatureStore load_features(const std::string& path) {
  container::Loaded file = container::read_file(path, kFeatureMagic);
  const json& header = file.header;
  check_input(header.value("format", "") == "gf-features-v1", "feature container ", path,
              " has format '", header.value("format", "?"), "'");
  FeatureStore store;
  for (const auto& e : header.at("experts")) {
    ExpertSpec spec{e.at("name").get<std::string>(), e.at("dim").get<int>(),
                    e.value("category", "other")};
    check_known_dim(spec);
    store.experts.push_back(std::move(spec));
  }
  store.payload = std::move(file.payload);
  for (const auto& [video_id, per] : header.at("videos").items()) {
    std::vector<std::pair<int64_t, int>> lay(store.experts.size(), {-1, 0});
    for (size_t m = 0; m < store.experts.size(); ++m) {
      const ExpertSpec& spec = store.experts[m];
      if (!per.contains(spec.name)) continue;
      const int64_t offset = per[spec.name].at("offset").get<int64_t>();
      const int frames = per[spec.name].at("frames").get<int>();
      check_input(frames >= 1 && offset >= 0 &&
                      static_cast<size_t>(offset) + static_cast<size_t>(frames) * spec.raw_dim <=
                          store.payload.size(),
                  "feature container ", path, ": video '", video_id, "' expert '",
                  spec.name, "' block [", offset, ", +", frames, "x", spec.raw_dim,
                  ") exceeds the payload");
      lay[m] = {offset, frames};
    }
    store.layout.emplace(video_id, std::move(lay));
  }
  return store;
}

VideoFeatures FeatureStore::get(const std::string& video_id) const {
  auto it = layout.find(video_id);
  check_input(it != layout.end(), "video id '", video_id, "' is not in the feature container");
  VideoFeatures vf;
  vf.streams.resize(experts.size());
  vf.lengths.assign(experts.size(), 0);
  for (size_t m = 0; m < experts.size(); ++m) {
    const auto [offset, frames] = it->second[m];
    if (frames == 0) continue;
    const size_t count = static_cast<size_t>(frames) * experts[m].raw_dim;
    vf.streams[m].assign(payload.begin() + offset,
                         payload.begin() + offset + static_cast<int64_t>(count));
    vf.lengths[m] = frames;
  }
  return vf;
}

VideoFeatures select_streams(const VideoFeatures& vf, const std::vector<ExpertSpec>& have,
                             const std::vector<ExpertSpec>& want) {
  check(vf.streams.size() == have.size() && vf.lengths.size() == have.size(),
        "select_streams: feature block does not match its expert list");
  VideoFeatures out;
  out.streams.resize(want.size());
  out.lengths.assign(want.size(), 0);
  for (size_t m = 0; m < want.size(); ++m) {
    bool found = false;
    for (size_t s = 0; s < have.size(); ++s) {
      if (have[s].name != want[m].name) continue;
      check_input(have[s].raw_dim == want[m].raw_dim, "expert '", want[m].name,
                  "': container stores dimension ", have[s].raw_dim, ", model expects ",
                  want[m].raw_dim);
      out.streams[m] = vf.streams[s];
      out.lengths[m] = vf.lengths[s];
      found = true;
      break;
    }
    check_input(found, "expert '", want[m].name, "' is not in the feature container");
  }
  return out;
}

std::vector<std::string> FeatureStore::video_ids() const {
  std::vector<std::string> ids;
  ids.reserve(layout.size());
  for (const auto& [id, lay] : layout) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---- batching ----

std::vector<std::vector<int>> make_batches(const std::vector<int>& indices, int batch,
                                           uint64_t seed) {
  check(batch >= 1, "batch size must be at least 1, got ", batch);
  std::vector<int> order = indices;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch))
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() +
                             static_cast<long>(std::min(start + batch, order.size())));
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

// ---- synthetic corpus ----

namespace {

// Symbol ids for the generator grammar below.
enum SynthNT { kS = 0, kNP = 1, kVP = 2, kPP = 3 };
constexpr int kSynthN = 4;
enum SynthPT { kDT = 0, kNN = 1, kVB = 2, kIN = 3, kJJ = 4 };
constexpr int kSynthP = 5;

const std::vector<std::vector<std::string>> kSynthWords = {
    /*DT*/ {"the", "a", "every", "some", "this"},
    /*NN*/
    {"dog", "cat", "man", "woman", "park", "telescope", "sandwich", "movie", "ball",
     "street", "house", "bird", "pizza", "garden", "child", "robot"},
    /*VB*/
    {"saw", "ate", "chased", "held", "likes", "watched", "threw", "found", "carried",
     "painted"},
    /*IN*/ {"in", "on", "with", "near", "under", "behind"},
    /*JJ*/ {"big", "small", "red", "happy", "old", "young"},
};

struct BinaryRule {
  int parent, left, right;  // left/right over N ∪ P (preterminals offset by N)
  double prob;
};

const std::vector<BinaryRule> kSynthBinary = {
    {kS, kNP, kVP, 1.0},
    {kNP, kSynthN + kDT, kSynthN + kNN, 0.45},
    {kNP, kSynthN + kJJ, kSynthN + kNN, 0.20},
    {kNP, kSynthN + kNN, kSynthN + kNN, 0.10},
    {kNP, kNP, kPP, 0.25},
    {kVP, kSynthN + kVB, kNP, 0.55},
    {kVP, kVP, kPP, 0.20},
    {kVP, kSynthN + kVB, kPP, 0.25},
    {kPP, kSynthN + kIN, kNP, 1.0},
};

int synth_word_id(int preterminal, int word_rank) {
  int id = 0;
  for (int t = 0; t < preterminal; ++t) id += static_cast<int>(kSynthWords[t].size());
  return id + word_rank;
}

struct Expansion {
  std::vector<int> words;          // word ids
  std::vector<int> tags;           // preterminal per word
  std::string ptb;
  std::vector<LabeledSpan> spans;  // absolute, width >= 2
};

// Samples an index from unnormalized weights.
int pick(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double draw = rng.uniform() * total;
  for (size_t i = 0; i < weights.size(); ++i) {
    draw -= weights[i];
    if (draw <= 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

// Expands `symbol` (N ∪ P index) at token offset `at`.  Returns false when
// the budget is exhausted; the caller rejects and resamples.
bool expand(const SynthGrammar& g, Rng& rng, int symbol, int at, int budget,
            Expansion* out, std::vector<uint64_t>* binary_counts) {
  if (static_cast<int>(out->words.size()) >= budget) return false;
  if (symbol >= kSynthN) {
    const int t = symbol - kSynthN;
    std::vector<double> weights;
    for (size_t r = 0; r < kSynthWords[static_cast<size_t>(t)].size(); ++r)
      weights.push_back(std::exp(
          g.rules.lexical[static_cast<size_t>(t) * g.rules.sizes.vocab +
                          synth_word_id(t, static_cast<int>(r))]));
    const int rank = pick(rng, weights);
    out->words.push_back(synth_word_id(t, rank));
    out->tags.push_back(t);
    out->ptb += "(" + g.preterminals[static_cast<size_t>(t)] + " " +
                kSynthWords[static_cast<size_t>(t)][static_cast<size_t>(rank)] + ")";
    return true;
  }
  std::vector<double> weights;
  std::vector<const BinaryRule*> rules;
  for (const BinaryRule& r : kSynthBinary)
    if (r.parent == symbol) {
      rules.push_back(&r);
      weights.push_back(r.prob);
    }
  const BinaryRule& r = *rules[static_cast<size_t>(pick(rng, weights))];
  if (binary_counts) {
    const int S = g.rules.sizes.symbols();
    ++(*binary_counts)[static_cast<size_t>(r.parent) * S * S +
                       static_cast<size_t>(r.left) * S + r.right];
  }
  out->ptb += "(" + g.nonterminals[static_cast<size_t>(symbol)] + " ";
  if (!expand(g, rng, r.left, at, budget, out, binary_counts)) return false;
  const int mid = static_cast<int>(out->words.size());
  out->ptb += " ";
  if (!expand(g, rng, r.right, mid, budget, out, binary_counts)) return false;
  out->ptb += ")";
  const int end = static_cast<int>(out->words.size()) - 1;
  if (end > at)
    out->spans.push_back({{at, end}, g.nonterminals[static_cast<size_t>(symbol)]});
  return true;
}

std::vector<float> prototype(const std::string& word, int expert, int dim) {
  uint64_t seed = fnv1a64(word.data(), word.size()) ^ (0x9e3779b97f4a7c15ull * (expert + 1));
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(dim));
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

bool synth_sample(const SynthGrammar& g, Rng& rng, int max_len,
                  std::vector<std::string>* tokens, std::string* ptb,
                  std::vector<uint64_t>* binary_counts) {
  Expansion ex;
  if (!expand(g, rng, kS, 0, max_len - 1, &ex, binary_counts)) return false;
  if (tokens) {
    tokens->clear();
    for (int w : ex.words) tokens->push_back(g.vocab[static_cast<size_t>(w)]);
  }
  if (ptb) *ptb = ex.ptb;
  return true;
}

SynthGrammar synth_grammar() {
  SynthGrammar g;
  g.nonterminals = {"S", "NP", "VP", "PP"};
  g.preterminals = {"DT", "NN", "VB", "IN", "JJ"};
  for (const auto& group : kSynthWords)
    g.vocab.insert(g.vocab.end(), group.begin(), group.end());

  GrammarSizes sizes{kSynthN, kSynthP, static_cast<int>(g.vocab.size())};
  g.rules = RuleTensors::zeros(sizes);
  const int S = sizes.symbols();
  g.rules.root[kS] = 0.0;  // log 1: S is always the start
  for (const BinaryRule& r : kSynthBinary)
    g.rules.binary[static_cast<size_t>(r.parent) * S * S + static_cast<size_t>(r.left) * S +
                   r.right] = std::log(r.prob);
  // Within each preterminal the word weights fall off harmonically.
  for (int t = 0; t < kSynthP; ++t) {
    const size_t count = kSynthWords[static_cast<size_t>(t)].size();
    double total = 0.0;
    for (size_t r = 0; r < count; ++r) total += 1.0 / static_cast<double>(r + 1);
    for (size_t r = 0; r < count; ++r)
      g.rules.lexical[static_cast<size_t>(t) * sizes.vocab +
                      synth_word_id(t, static_cast<int>(r))] =
          std::log(1.0 / static_cast<double>(r + 1) / total);
  }
  check(g.rules.max_normalization_error() < 1e-12, "generator grammar must normalize");
  return g;
}

SynthData synth_corpus(int n_sentences, uint64_t seed, double feature_noise, int max_len) {
  check(n_sentences >= 1, "synth_corpus: need at least one sentence");
  SynthData data;
  data.grammar = synth_grammar();
  data.experts = {{"synthobj", 32, "object"}, {"synthact", 32, "action"},
                  {"synthaud", 16, "other"}};

  Rng rng(derive_seed(seed, 0xC0FFEE));
  for (int s = 0; s < n_sentences; ++s) {
    Expansion ex;
    for (int attempt = 0;; ++attempt) {
      check(attempt < 10000, "synth_corpus: generator failed to produce a sentence in [3, ",
            max_len, ") tokens");
      ex = Expansion{};
      if (expand(data.grammar, rng, kS, 0, max_len - 1, &ex, nullptr) &&
          static_cast<int>(ex.words.size()) >= 3)
        break;
    }

    CorpusEntry entry;
    entry.id = "synth" + std::to_string(s);
    entry.video_id = "vid" + std::to_string(s);
    for (int w : ex.words) entry.tokens.push_back(data.grammar.vocab[static_cast<size_t>(w)]);
    const double frac = n_sentences == 1 ? 0.0
                                         : static_cast<double>(s) / n_sentences;
    entry.split = frac < 0.8 ? "train" : (frac < 0.9 ? "val" : "test");

    GoldTree tree = parse_gold_tree(ex.ptb, s + 1);
    check(tree.n == static_cast<int>(entry.tokens.size()),
          "synth_corpus: derivation and tokens disagree");

    // Per-expert pseudo-features: object frames at nouns, action frames at
    // verbs, one global audio frame — word prototypes plus Gaussian noise.
    VideoFeatures vf;
    vf.streams.resize(data.experts.size());
    vf.lengths.assign(data.experts.size(), 0);
    auto emit = [&](int expert, const std::string& word) {
      const int dim = data.experts[static_cast<size_t>(expert)].raw_dim;
      std::vector<float> frame = prototype(word, expert, dim);
      for (float& x : frame) x += static_cast<float>(feature_noise * rng.normal());
      auto& stream = vf.streams[static_cast<size_t>(expert)];
      stream.insert(stream.end(), frame.begin(), frame.end());
      vf.lengths[static_cast<size_t>(expert)] += 1;
    };
    std::vector<float> audio(16, 0.0f);
    int audio_terms = 0;
    for (size_t i = 0; i < ex.words.size(); ++i) {
      const std::string& word = entry.tokens[i];
      if (ex.tags[i] == kNN) emit(0, word);
      if (ex.tags[i] == kVB) emit(1, word);
      if (ex.tags[i] == kNN || ex.tags[i] == kVB) {
        const std::vector<float> p = prototype(word, 2, 16);
        for (size_t d = 0; d < p.size(); ++d) audio[d] += p[d];
        ++audio_terms;
      }
    }
    for (float& x : audio)
      x = x / static_cast<float>(std::max(audio_terms, 1)) +
          static_cast<float>(feature_noise * rng.normal());
    vf.streams[2].assign(audio.begin(), audio.end());
    vf.lengths[2] = 1;

    data.entries.push_back(std::move(entry));
    data.trees.push_back(std::move(tree));
    data.features.emplace_back("vid" + std::to_string(s), std::move(vf));
  }
  return data;
}

void write_synth_dataset(const std::string& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  write_corpus(dir + "/corpus.jsonl", data.entries);

  std::ofstream gold(dir + "/gold.txt", std::ios::trunc);
  check(gold.good(), "cannot write ", dir, "/gold.txt");
  for (size_t i = 0; i < data.trees.size(); ++i) {
    // Rebuild a bracketing from the stored spans so the written file is
    // exactly what the reader produces (labels on nontrivial spans only).
    const GoldTree& t = data.trees[i];
    const CorpusEntry& e = data.entries[i];
    std::map<std::pair<int, int>, std::string> label_of;
    for (const LabeledSpan& s : t.spans) label_of[{s.span.i, s.span.j}] = s.label;
    // Render as nested brackets over the known binary structure.
    std::function<std::string(int, int)> render = [&](int i0, int j0) -> std::string {
      if (i0 == j0) return "(X " + e.tokens[static_cast<size_t>(i0)] + ")";
      int split = -1;
      for (int k = i0; k < j0; ++k) {
        const bool left_ok = i0 == k || label_of.count({i0, k}) != 0;
        const bool right_ok = k + 1 == j0 || label_of.count({k + 1, j0}) != 0;
        if (left_ok && right_ok) {
          split = k;
          break;
        }
      }
      check(split >= 0, "write_synth_dataset: span structure is not a binary tree");
      auto it = label_of.find({i0, j0});
      const std::string label = it == label_of.end() ? "S" : it->second;
      return "(" + label + " " + render(i0, split) + " " + render(split + 1, j0) + ")";
    };
    gold << render(0, t.n - 1) << "\n";
  }
  check(gold.good(), "write failed for ", dir, "/gold.txt");

  write_features(dir + "/features.gff", data.experts, data.features);
}

}  // namespace gf
