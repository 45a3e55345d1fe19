#include "synthetic.hpp"

#include <map>
#include <string>

#include "posdep/rng.hpp"

namespace posdep::testing {

namespace {

std::string pick(Rng& rng, const std::vector<std::string>& words) {
  return words[static_cast<std::size_t>(rng.below(words.size()))];
}

std::vector<std::string> lexicon(const std::string& stem, std::size_t n) {
  static const char* syllables[] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(std::string(syllables[i % 10]) + syllables[(i / 10 + 3 * i + 1) % 10] + stem);
  }
  return out;
}

struct Piece {
  std::string form, tag, label;
  int head;  // 1-based, 0 = root
};

std::string coarse(const std::string& tag) {
  static const std::map<std::string, std::string> m{
      {"DT", "d"}, {"JJ", "a"}, {"NN", "n"}, {"VBZ", "v"}, {"IN", "p"}, {".", "w"}};
  return m.at(tag);
}

}  // namespace

std::vector<corpus::Sentence> synthetic_treebank(const SyntheticOptions& o) {
  Rng rng = Rng(o.seed).split("synthetic");
  const std::vector<std::string> det{"the", "a", "every", "this"};
  const std::vector<std::string> prep{"in", "on", "with", "near"};
  const auto adj = lexicon("ish", o.lexicon);
  auto nouns = lexicon("on", o.lexicon * 2);
  auto verbs = lexicon("es", o.lexicon);
  std::vector<std::string> both;
  if (o.ambiguous) both = lexicon("ax", std::max<std::size_t>(2, o.lexicon / 2));

  std::vector<corpus::Sentence> out;
  for (std::size_t s = 0; s < o.sentences; ++s) {
    std::vector<Piece> p;
    auto noun_phrase = [&](int head_of_noun, const std::string& label) {
      const int start = static_cast<int>(p.size()) + 1;
      const bool has_adj = rng.bernoulli(o.adjective);
      const int noun = start + 1 + (has_adj ? 1 : 0);
      p.push_back({pick(rng, det), "DT", "det", noun});
      if (has_adj) p.push_back({pick(rng, adj), "JJ", "amod", noun});
      const bool amb = !both.empty() && rng.bernoulli(0.3);
      p.push_back({amb ? pick(rng, both) : pick(rng, nouns), "NN", label, head_of_noun});
      return noun;
    };
    // Verb position is known only after the subject, so patch heads later.
    const int subj = noun_phrase(-1, "nsubj");
    const int verb = static_cast<int>(p.size()) + 1;
    const bool amb_verb = !both.empty() && rng.bernoulli(0.3);
    p.push_back({amb_verb ? pick(rng, both) : pick(rng, verbs), "VBZ", "root", 0});
    p[static_cast<std::size_t>(subj - 1)].head = verb;
    const int obj = noun_phrase(verb, "obj");
    if (rng.bernoulli(o.preposition)) {
      const int in = static_cast<int>(p.size()) + 1;
      // Attachment depends on the preposition: "with" modifies the verb.
      const std::string pw = pick(rng, prep);
      p.push_back({pw, "IN", "case", -1});
      const int pobj = noun_phrase(pw == "with" ? verb : obj, pw == "with" ? "obl" : "nmod");
      p[static_cast<std::size_t>(in - 1)].head = pobj;
    }
    p.push_back({".", ".", "punct", verb});

    corpus::Sentence sent;
    for (const auto& x : p) {
      corpus::Token t;
      t.form = x.form;
      t.tag = x.tag;
      t.head = x.head;
      t.label = x.label;
      t.is_punct = x.tag == ".";
      sent.tokens.push_back(std::move(t));
    }
    out.push_back(std::move(sent));
  }
  return out;
}

std::vector<corpus::Sentence> synthetic_hetero(const SyntheticOptions& o) {
  SyntheticOptions h = o;
  h.seed = o.seed ^ 0x5eedULL;
  auto sents = synthetic_treebank(h);
  for (auto& s : sents) {
    s.source = corpus::Source::hetero_tags;
    for (auto& t : s.tokens) {
      t.hetero = coarse(t.tag);
      t.tag.clear();
      t.head.reset();
      t.label.reset();
    }
  }
  return sents;
}

nn::ContextLayers random_context(std::span<const corpus::Sentence> sentences, std::size_t layers,
                                 std::size_t dim, std::uint64_t seed) {
  Rng rng = Rng(seed).split("context");
  nn::ContextLayers c;
  c.layer_count = layers;
  c.dim = dim;
  for (const auto& s : sentences) {
    ad::Tensor t({layers, s.size(), dim});
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(rng.uniform(-1, 1)));
    c.sentences.push_back(std::move(t));
  }
  return c;
}

}  // namespace posdep::testing
