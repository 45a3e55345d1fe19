#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posdep/context_layers.hpp"
#include "posdep/corpus.hpp"
#include "posdep/decode.hpp"
#include "posdep/models.hpp"

namespace posdep::train {

using corpus::Sentence;

// Predicted values of a token: the pred_* field when present, else the
// plain annotation (files written by `predict` in the conllx profile carry
// their predictions in the ordinary columns).
std::string predicted_tag(const corpus::Token& t);
std::optional<std::string> predicted_hetero(const corpus::Token& t);
std::optional<int> predicted_head(const corpus::Token& t);
std::optional<std::string> predicted_label(const corpus::Token& t);

struct EvalReport {
  double ta = 0.0;
  std::optional<double> hetero_ta;
  double uas = 0.0;
  double las = 0.0;
  std::size_t total = 0;
  std::size_t tagged = 0;  // tokens with a gold tag
  std::size_t scored = 0;
  std::size_t excluded = 0;
  std::string decode = "mst";
  // Whether the predictions carry tags / heads at all.
  bool has_tags = false;
  bool has_heads = false;
};

// TA counts every token with a gold tag; UAS/LAS skip punctuation when
// `exclude_punct` is set. Percentages.
EvalReport evaluate(std::span<const Sentence> gold, std::span<const Sentence> predicted,
                    bool exclude_punct, const std::string& decode = "mst");

// key=value lines.
std::string format_report(const EvalReport& r);

struct Adam {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-12;
  double decay = 0.75;
  std::size_t decay_steps = 5000;

  // One update of every trainable parameter from its grad buffer.
  void step(nn::ParameterStore& params);
  double current_lr() const;
  std::size_t steps() const { return t_; }

 private:
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// Rescales all gradients so their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_gradients(nn::ParameterStore& params, double max_norm);

// Patience counts epochs without improvement of the selection key.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
  // Returns true when the key improved (strictly, lexicographically).
  bool observe(const std::vector<double>& key);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0, since_best_ = 0;
  std::optional<std::vector<double>> best_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l_dep = 0.0, l_pos = 0.0, l_pos_hetero = 0.0;
  EvalReport dev;
  double seconds = 0.0;
  bool improved = false;
};

std::string format_epoch(const EpochRecord& r, bool with_time = true);

struct TrainOptions {
  std::size_t batch_tokens = 5000;
  std::size_t max_epochs = 1000;
  // 0 selects 100, or 50 for models with context layers.
  std::size_t patience = 0;
  Adam optimizer;
  double clip = 5.0;
  // Heterogeneous sentences drawn per treebank sentence each epoch.
  double hetero_ratio = 1.0;
  decode::TreeDecoder dev_decoder = decode::TreeDecoder::mst;
  bool exclude_punct = false;
  std::uint64_t seed = 1;
  // Called after every epoch; returning true ends training.
  std::function<bool(const EpochRecord&)> stop_when;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainData {
  std::vector<Sentence> train;
  std::vector<Sentence> dev;
  std::vector<Sentence> hetero;
  // Aligned with the corresponding corpora when the model uses them.
  std::optional<nn::ContextLayers> train_context, dev_context, hetero_context;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  EvalReport best_dev;
  bool stopped_early = false;
};

// Trains `model` in place; on return it holds the best-dev parameters.
TrainResult train(models::Model& model, const TrainData& data, const TrainOptions& options);

// Tags and parses sentences, writing pred_* fields.
std::vector<Sentence> predict(const models::Model& model, std::span<const Sentence> sentences,
                              decode::TreeDecoder decoder,
                              const nn::ContextLayers* context = nullptr);

// Dev selection key: (LAS, TA) for parsers, (TA) for tagger-only models.
std::vector<double> selection_key(const models::ModelSpec& spec, const EvalReport& r);

enum class Metric { ta, uas, las };
Metric parse_metric(std::string_view name);
std::string to_string(Metric m);

struct SignificanceResult {
  std::string test = "paired-permutation";
  Metric metric = Metric::las;
  double score_a = 0.0, score_b = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  // (count + 1) / (trials + 1), count = trials with |delta| >= observed.
  double p_value = 1.0;
};

// Two-sided paired permutation test over sentences.
SignificanceResult significance(std::span<const Sentence> gold, std::span<const Sentence> a,
                                std::span<const Sentence> b, Metric metric, bool exclude_punct,
                                std::size_t trials = 10000, std::uint64_t seed = 1);

std::string format_significance(const SignificanceResult& r);

struct PosDeltaRow {
  std::string tag;
  std::size_t tokens = 0;  // words with this gold tag
  std::size_t arcs = 0;    // scored arcs whose dependent has this gold tag
  double ta_a = 0.0, ta_b = 0.0, las_a = 0.0, las_b = 0.0;
  double delta_ta() const { return ta_b - ta_a; }
  double delta_las() const { return las_b - las_a; }
};

// One row per gold tag, sorted by tag; deltas are B - A.
std::vector<PosDeltaRow> per_pos_delta(std::span<const Sentence> gold, std::span<const Sentence> a,
                                       std::span<const Sentence> b, bool exclude_punct);

struct PatternRow {
  std::string gold_tag, pred_tag;
  std::size_t support = 0;
  double uas = 0.0, las = 0.0;
};

struct PatternTable {
  std::vector<PatternRow> rows;
  PatternRow correct_tag;  // aggregate over X -> X rows
  PatternRow wrong_tag;    // aggregate over X -> Y, X != Y
};

// Groups scored tokens by (gold tag, predicted tag).
PatternTable pattern_table(std::span<const Sentence> gold, std::span<const Sentence> predicted,
                           bool exclude_punct);

// Tab-separated with a header row.
std::string format_pos_delta(const std::vector<PosDeltaRow>& rows);
std::string format_patterns(const PatternTable& t);

}  // namespace posdep::train
