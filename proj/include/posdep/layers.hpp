#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posdep/autodiff.hpp"
#include "posdep/rng.hpp"

namespace posdep::nn {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

enum class Init { zeros, uniform, orthogonal };

// Bound for uniform initialization.
inline constexpr double kInitScale = 0.05;

// Owns every parameter of a model under a stable address and a unique name.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Tensor& add(const std::string& name, Shape shape, Init init, Rng& rng);
  // A fixed (non-trainable) tensor, e.g. pretrained embeddings.
  Tensor& add_fixed(const std::string& name, Tensor value);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  struct Entry {
    std::string name;
    Tensor* tensor;
  };
  // In creation order.
  std::vector<Entry> entries();
  std::vector<Entry> trainable();
  void zero_grad();

 private:
  std::deque<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

// Fills `t` (shape [rows x k*rows]) with k stacked orthogonal square blocks,
// or a single orthogonal matrix when rows and columns are otherwise related.
void init_orthogonal(Tensor& t, Rng& rng);

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& name, std::size_t count, std::size_t dim,
            Rng& rng, Init init = Init::uniform);

  Var lookup(Graph& g, std::span<const int> ids) const;
  std::size_t dim() const { return table_->dim(1); }
  std::size_t count() const { return table_->dim(0); }
  Tensor& table() const { return *table_; }

 private:
  Tensor* table_ = nullptr;
};

// Sum of a fixed pretrained row and a trainable row initialized at zero.
// The pretrained table is aligned with the word vocabulary; words absent
// from the pretrained file have an all-zero pretrained row.
class WordEmbedding {
 public:
  WordEmbedding() = default;
  WordEmbedding(ParameterStore& store, const std::string& name, Tensor pretrained_aligned);

  Var embed(Graph& g, std::span<const int> word_ids) const;
  Var embed_word(Graph& g, int word_id) const { return embed(g, std::span<const int>(&word_id, 1)); }
  std::size_t dim() const { return trainable_->dim(1); }
  std::size_t count() const { return trainable_->dim(0); }
  const Tensor& pretrained() const { return *pretrained_; }
  Tensor& trainable() const { return *trainable_; }

 private:
  Tensor* pretrained_ = nullptr;
  Tensor* trainable_ = nullptr;
};

// Dropout masks that were applied during one recurrent pass, one entry per
// time step, kept for inspection.
struct DropoutTrace {
  struct Pass {
    std::size_t layer = 0;
    bool backward = false;
    std::vector<std::vector<double>> input_masks;
    std::vector<std::vector<double>> hidden_masks;
  };
  std::vector<Pass> passes;
};

// Unidirectional LSTM with gates ordered (input, forget, candidate, output).
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterStore& store, const std::string& name, std::size_t input_dim,
       std::size_t hidden_dim, Rng& rng);

  // Runs over the rows of `inputs` ([n x input_dim]) and returns the hidden
  // states as [n x hidden], row t holding the state after consuming row t in
  // reading order. When `reverse` is set the sequence is consumed from the
  // last row to the first, but the output rows stay aligned with the input.
  // Masks, when given, are applied unchanged at every time step.
  Var run(Graph& g, Var inputs, bool reverse, const Tensor* input_mask = nullptr,
          const Tensor* hidden_mask = nullptr, DropoutTrace::Pass* trace = nullptr) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  Tensor& input_weight() const { return *wx_; }
  Tensor& hidden_weight() const { return *wh_; }
  Tensor& bias() const { return *b_; }

 private:
  std::size_t input_dim_ = 0, hidden_dim_ = 0;
  Tensor* wx_ = nullptr;
  Tensor* wh_ = nullptr;
  Tensor* b_ = nullptr;
};

// Character-level BiLSTM word encoder: output = [final fwd ; final bwd].
class CharEncoder {
 public:
  CharEncoder() = default;
  CharEncoder(ParameterStore& store, const std::string& name, std::size_t char_count,
              std::size_t char_dim, std::size_t output_dim, Rng& rng);

  // [1 x output_dim]
  Var encode(Graph& g, std::span<const int> chars) const;
  std::size_t output_dim() const { return 2 * forward_.hidden_dim(); }
  const Lstm& forward_lstm() const { return forward_; }
  const Lstm& backward_lstm() const { return backward_; }

 private:
  Embedding table_;
  Lstm forward_, backward_;
};

class BiLstmStack {
 public:
  BiLstmStack() = default;
  BiLstmStack(ParameterStore& store, const std::string& name, std::size_t input_dim,
              std::size_t hidden_dim, std::size_t layers, double input_dropout,
              double hidden_dropout, Rng& rng);

  // inputs: [n x input_dim] -> [n x 2*hidden]. In train mode one input mask
  // and one hidden mask are drawn per (layer, direction) and reused at every
  // step; in eval mode no dropout is applied.
  Var run(Graph& g, Var inputs, bool train, Rng& rng, DropoutTrace* trace = nullptr) const;

  std::size_t output_dim() const { return 2 * hidden_dim_; }
  std::size_t layers() const { return forward_.size(); }
  const Lstm& forward_layer(std::size_t l) const { return forward_.at(l); }
  const Lstm& backward_layer(std::size_t l) const { return backward_.at(l); }

 private:
  std::size_t hidden_dim_ = 0;
  double input_dropout_ = 0.0, hidden_dropout_ = 0.0;
  std::vector<Lstm> forward_, backward_;
};

enum class Activation { linear, leaky_relu };

struct MlpLayerSpec {
  std::size_t out_dim;
  Activation activation;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t input_dim,
      std::vector<MlpLayerSpec> layers, Rng& rng);

  // Dropout (train mode, rate > 0) follows every non-linear layer.
  Var forward(Graph& g, Var x, bool train = false, double dropout = 0.0, Rng* rng = nullptr) const;
  std::size_t output_dim() const { return specs_.back().out_dim; }
  Tensor& weight(std::size_t layer) const { return *weights_.at(layer); }
  Tensor& bias(std::size_t layer) const { return *biases_.at(layer); }

 private:
  std::vector<MlpLayerSpec> specs_;
  std::vector<Tensor*> weights_, biases_;
};

// score[i][j][l] = [dep_i; 1]^T W_l head_j.
class BiaffineScorer {
 public:
  BiaffineScorer() = default;
  BiaffineScorer(ParameterStore& store, const std::string& name, std::size_t dep_dim,
                 std::size_t head_dim, std::size_t outputs, Rng& rng);

  // [n x m x outputs]
  Var scores(Graph& g, Var dep, Var head) const;
  // Single-output form: [n x m].
  Var arc_scores(Graph& g, Var dep, Var head) const;
  Tensor& weight() const { return *weight_; }

 private:
  Tensor* weight_ = nullptr;
};

// gamma * sum_j softmax(s)_j * h_j over externally supplied layers.
class LayerAttention {
 public:
  LayerAttention() = default;
  LayerAttention(ParameterStore& store, const std::string& name, std::size_t layer_count,
                 double layer_dropout);

  // layers: [L x n x d] -> [n x d].
  Var forward(Graph& g, const Tensor& layers, bool train, Rng& rng) const;
  // Layers kept for one call; never empty.
  std::vector<int> sample_survivors(bool train, Rng& rng) const;
  // Full-length mixture weights (dropped layers get exactly 0).
  std::vector<double> mixture_weights(std::span<const int> survivors) const;

  std::size_t layer_count() const { return scores_->size(); }
  Tensor& gamma() const { return *gamma_; }
  Tensor& layer_scores() const { return *scores_; }

  static constexpr int kRetryBudget = 8;

 private:
  Tensor* gamma_ = nullptr;
  Tensor* scores_ = nullptr;
  double layer_dropout_ = 0.0;
};

// Replaces each id by `mask_id` with probability `rate`.
std::vector<int> token_dropout(std::span<const int> ids, double rate, int mask_id, Rng& rng);

}  // namespace posdep::nn
