#pragma once

// Basic tagger, basic and pipeline parsers, and the three joint frameworks.
//
// Every framework is assembled from the same pieces:
//   input      x_i = e^w_i (+) e^c_i  [(+) e^p_i (+) e^p'_i for pipeline parsers]
//   tower      3-layer BiLSTM over x_0..x_n (x_0 is the pseudo-root)
//   tag head   MLP(leaky ReLU) -> linear scores, one head per tag set
//   parse head MLP(leaky ReLU) splits into dep/head views, biaffine arc and
//              label scorers
//
//   share-loose  tag tower and parse tower, sharing only word/char embeddings
//   share-tight  one tower under every head
//   stack        parse tower input is x_i (+) r^p_i, the tag tower's top output

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posdep/autodiff.hpp"
#include "posdep/corpus.hpp"
#include "posdep/decode.hpp"
#include "posdep/layers.hpp"
#include "posdep/model_spec.hpp"
#include "posdep/rng.hpp"

namespace posdep::models {

using ad::Graph;
using ad::Var;
using corpus::EncodedSentence;

struct Outputs {
  std::optional<Var> tag_logits;     // [n x T]
  std::optional<Var> hetero_logits;  // [n x T']
  std::optional<Var> arc_scores;     // [n x (n+1)]
  std::optional<Var> label_scores;   // [n x (n+1) x L]
  std::optional<Var> tag_tower;      // [(n+1) x 2h], when a tag tower exists
};

struct ForwardRequest {
  bool tags = true;
  bool parse = true;
};

// Supervision terms of the joint objective.
enum class LossTerm { dep, pos, pos_hetero };

struct LossBreakdown {
  Var total;
  double dep = 0.0;
  double pos = 0.0;
  double pos_hetero = 0.0;
  std::size_t dep_tokens = 0;
  std::size_t pos_tokens = 0;
  std::size_t hetero_tokens = 0;
};

class Model {
 public:
  // `pretrained_aligned` is [vocab.word_count() x word_dim]; pass an empty
  // tensor for an all-zero table.
  Model(ModelSpec spec, corpus::Vocab vocab, ad::Tensor pretrained_aligned = {});
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  const corpus::Vocab& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return params_; }

  Outputs forward(Graph& g, const EncodedSentence& s, bool train, Rng& rng,
                  ForwardRequest request = {}) const;

  // L = L_DEP + L_POS + L_POS'. Each term is averaged over the tokens that
  // carry its supervision in the batch; a term without supervision is 0.
  LossBreakdown joint_loss(Graph& g, std::span<const EncodedSentence* const> batch, bool train,
                           Rng& rng) const;
  // One term alone, in its own graph.
  double loss_term(std::span<const EncodedSentence* const> batch, LossTerm term) const;
  LossBreakdown loss_terms(Graph& g, std::span<const EncodedSentence* const> batch, bool train,
                           Rng& rng, bool dep, bool pos, bool hetero) const;

  decode::ParseResult predict(const EncodedSentence& s,
                              decode::TreeDecoder decoder = decode::TreeDecoder::mst) const;

  // Writes a prediction into the pred_* fields of a sentence.
  void apply_prediction(corpus::Sentence& s, const decode::ParseResult& r) const;

  // Attaches context tensors to encoded sentences (no-op unless enabled).
  bool uses_context() const { return spec_.use_context_layers; }

 private:
  struct Tower {
    nn::BiLstmStack lstm;
    std::optional<nn::LayerAttention> context;
  };

  void build(const ad::Tensor& pretrained_aligned);
  std::size_t base_input_dim() const;
  Var tower_input(Graph& g, const EncodedSentence& s, const Tower& tower, Var word,
                  std::optional<Var> chars, bool train, Rng& rng) const;

  ModelSpec spec_;
  corpus::Vocab vocab_;
  nn::ParameterStore params_;

  nn::WordEmbedding word_;
  std::optional<nn::CharEncoder> chars_;
  std::optional<nn::Embedding> tag_embed_, hetero_embed_;
  std::optional<Tower> tag_tower_, parse_tower_;
  std::optional<nn::Mlp> tag_head_, hetero_head_;
  std::optional<nn::Mlp> arc_dep_, arc_head_, label_dep_, label_head_;
  std::optional<nn::BiaffineScorer> arc_scorer_, label_scorer_;
};

// Cross-entropy over heads for every dependent: mean over rows of
// -log softmax(row)[gold head].
Var arc_loss(Var arc_scores, std::span<const int> gold_heads);
// Label cross-entropy at the gold head column only.
Var label_loss(Var label_scores, std::span<const int> gold_heads, std::span<const int> gold_labels);

// Checkpoint container:
//   "PDCK" | version u32 | spec text | vocab text | parameter count u32 |
//   per parameter: name | rank u32 | dims u64... | float64 values
// Strings are u64 length-prefixed; everything is little-endian.
void save_checkpoint(Model& model, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);
// Loads parameter values into an existing model; rejects a spec mismatch.
void load_parameters(Model& model, const std::string& path);

}  // namespace posdep::models
