#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "posdep/autodiff.hpp"

namespace posdep::corpus {

enum class Profile { conllx, conll09 };

Profile parse_profile(std::string_view name);
std::string to_string(Profile p);

enum class Source { treebank, hetero_tags };

struct Token {
  std::string form;
  std::string lemma = "_";
  // Gold annotation. An empty tag means "not annotated".
  std::string tag;
  std::optional<std::string> hetero;
  std::optional<int> head;
  std::optional<std::string> label;
  // Predicted annotation (written by predict/jackknife; read back from the
  // P-columns of conll09 files).
  std::optional<std::string> pred_tag;
  std::optional<std::string> pred_hetero;
  std::optional<int> pred_head;
  std::optional<std::string> pred_label;
  bool is_punct = false;

  // Tag fed to models that consume tags: the predicted one when available.
  const std::string& input_tag() const { return pred_tag ? *pred_tag : tag; }
  std::optional<std::string> input_hetero() const { return pred_hetero ? pred_hetero : hetero; }
};

struct Sentence {
  std::vector<Token> tokens;
  Source source = Source::treebank;

  std::size_t size() const { return tokens.size(); }
  std::vector<int> gold_heads() const;
};

// PTB punctuation tags excluded from attachment scores when requested.
const std::set<std::string>& default_punct_tags();

struct ReadOptions {
  std::set<std::string> punct_tags = default_punct_tags();
  // Off for system output, whose trees may be ill-formed (greedy decoding).
  bool validate_trees = true;
};

// Sentences are separated by blank lines; '#' lines are comments. Gold trees
// must be single-rooted arborescences.
std::vector<Sentence> read_conll(const std::string& path, Profile profile,
                                 const ReadOptions& options = {});
std::vector<Sentence> parse_conll(std::string_view text, Profile profile,
                                  const ReadOptions& options = {}, const std::string& origin = "<text>");

// Two columns per line: form and tag.
std::vector<Sentence> read_tag_corpus(const std::string& path);
std::vector<Sentence> parse_tag_corpus(std::string_view text, const std::string& origin = "<text>");

// Predicted fields are written where present, gold fields otherwise:
//   conllx:  POSTAG/HEAD/DEPREL hold the prediction, CPOSTAG the gold tag
//   conll09: predictions go to PPOS/PHEAD/PDEPREL (PFEAT for hetero tags)
// Heterogeneous tags travel in the features column as "hetero=TAG".
void write_conll(std::span<const Sentence> sentences, const std::string& path, Profile profile);
std::string format_conll(std::span<const Sentence> sentences, Profile profile);

// The predictions of a sentence read back from a system output file, exposed
// as its gold fields so it can be scored against a reference.
Sentence as_predictions(const Sentence& s);

// Re-derives is_punct from gold tags.
void mark_punct(std::vector<Sentence>& sentences, const std::set<std::string>& punct_tags);

std::vector<std::string> utf8_chars(std::string_view s);
std::string ascii_lower(std::string_view s);

struct PretrainedTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, int> index;
  ad::Tensor table;  // [V_pre x dim]
  std::vector<std::string> warnings;

  const double* find(const std::string& word) const;
};

// "word v1 ... v_dim" per line; a leading "count dim" header line is skipped.
PretrainedTable load_pretrained(const std::string& path, std::size_t dim);

// Model-ready view of a sentence. Index 0 of the per-position vectors is the
// pseudo-root; the per-dependent vectors (tags, heads, labels) cover 1..n.
struct EncodedSentence {
  std::vector<int> words;
  std::vector<std::vector<int>> chars;
  std::vector<int> input_tags;
  std::vector<int> input_hetero;
  std::vector<int> tags;
  std::vector<int> hetero_tags;
  std::vector<int> heads;
  std::vector<int> labels;
  Source source = Source::treebank;
  bool has_tags = false;
  bool has_hetero = false;
  bool has_tree = false;
  // [L x n x d] external contextual layers, when the model uses them.
  const ad::Tensor* context = nullptr;

  std::size_t size() const { return tags.size(); }
};

class Vocab {
 public:
  static constexpr int kOov = 0;
  static constexpr int kRoot = 1;
  static constexpr int kMinWordFrequency = 2;
  inline static const std::string kOovForm = "<oov>";
  inline static const std::string kRootForm = "<root>";

  // Word counts come from the treebank only; characters from both corpora.
  static Vocab build(std::span<const Sentence> treebank, std::span<const Sentence> hetero,
                     int min_frequency = kMinWordFrequency);

  int word_id(const std::string& form) const;
  int char_id(const std::string& ch) const;
  // -1 when unknown.
  int tag_id(const std::string& tag) const;
  int hetero_id(const std::string& tag) const;
  int label_id(const std::string& label) const;

  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  const std::string& hetero_tag(int id) const { return hetero_.at(static_cast<std::size_t>(id)); }
  const std::string& label(int id) const { return labels_.at(static_cast<std::size_t>(id)); }

  std::size_t word_count() const { return words_.size(); }
  std::size_t char_count() const { return chars_.size(); }
  std::size_t tag_count() const { return tags_.size(); }
  std::size_t hetero_count() const { return hetero_.size(); }
  std::size_t label_count() const { return labels_.size(); }
  // Tag-embedding rows for the pseudo-root and for unseen input tags.
  int root_tag_index() const { return static_cast<int>(tags_.size()); }
  int unknown_tag_index() const { return static_cast<int>(tags_.size()) + 1; }
  int root_hetero_index() const { return static_cast<int>(hetero_.size()); }
  int unknown_hetero_index() const { return static_cast<int>(hetero_.size()) + 1; }

  // Replaces forms that map to the OOV id by the OOV marker form.
  std::vector<Sentence> fold(std::span<const Sentence> sentences) const;

  EncodedSentence encode(const Sentence& s) const;

  // Line-oriented text, used inside checkpoints.
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);

  // Aligns a pretrained table with the word ids (form, then lowercased form,
  // else zeros). Result: [word_count x dim].
  ad::Tensor align_pretrained(const PretrainedTable* table, std::size_t dim) const;

  bool operator==(const Vocab& other) const;

 private:
  void rebuild_index();

  std::vector<std::string> words_, chars_, tags_, hetero_, labels_;
  std::unordered_map<std::string, int> word_index_, char_index_, tag_index_, hetero_index_,
      label_index_;
};

}  // namespace posdep::corpus
