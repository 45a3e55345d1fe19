#include "posdep/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <tuple>

#include "posdep/error.hpp"

namespace posdep::train {

std::string predicted_tag(const corpus::Token& t) { return t.pred_tag ? *t.pred_tag : t.tag; }

std::optional<std::string> predicted_hetero(const corpus::Token& t) {
  return t.pred_hetero ? t.pred_hetero : t.hetero;
}

std::optional<int> predicted_head(const corpus::Token& t) {
  return t.pred_head ? t.pred_head : t.head;
}

std::optional<std::string> predicted_label(const corpus::Token& t) {
  return t.pred_label ? t.pred_label : t.label;
}

namespace {

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

void check_aligned(std::span<const Sentence> gold, std::span<const Sentence> pred,
                   const char* what) {
  if (gold.size() != pred.size()) {
    throw AlignmentError(std::string(what) + ": " + std::to_string(gold.size()) +
                         " gold sentences but " + std::to_string(pred.size()) + " predicted");
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) {
      throw AlignmentError(std::string(what) + ": sentence " + std::to_string(i + 1) + " has " +
                           std::to_string(gold[i].size()) + " gold tokens but " +
                           std::to_string(pred[i].size()) + " predicted");
    }
    for (std::size_t j = 0; j < gold[i].size(); ++j) {
      if (gold[i].tokens[j].form != pred[i].tokens[j].form) {
        throw AlignmentError(std::string(what) + ": sentence " + std::to_string(i + 1) +
                             " token " + std::to_string(j + 1) + " reads '" +
                             gold[i].tokens[j].form + "' in gold but '" +
                             pred[i].tokens[j].form + "' in the prediction");
      }
    }
  }
}

bool head_correct(const corpus::Token& g, const corpus::Token& p) {
  const auto h = predicted_head(p);
  return g.head && h && *h == *g.head;
}

bool label_correct(const corpus::Token& g, const corpus::Token& p) {
  const auto l = predicted_label(p);
  return head_correct(g, p) && g.label && l && *l == *g.label;
}

// Per-sentence counts used by evaluation and the permutation test.
struct Counts {
  std::size_t tagged = 0, tag_ok = 0, scored = 0, head_ok = 0, label_ok = 0;
};

Counts count(const Sentence& gold, const Sentence& pred, bool exclude_punct) {
  Counts c;
  for (std::size_t j = 0; j < gold.size(); ++j) {
    const auto& g = gold.tokens[j];
    const auto& p = pred.tokens[j];
    if (!g.tag.empty()) {
      ++c.tagged;
      if (predicted_tag(p) == g.tag) ++c.tag_ok;
    }
    if (exclude_punct && g.is_punct) continue;
    ++c.scored;
    if (head_correct(g, p)) ++c.head_ok;
    if (label_correct(g, p)) ++c.label_ok;
  }
  return c;
}

}  // namespace

EvalReport evaluate(std::span<const Sentence> gold, std::span<const Sentence> predicted,
                    bool exclude_punct, const std::string& decode) {
  check_aligned(gold, predicted, "evaluate");
  EvalReport r;
  r.decode = decode;
  Counts total;
  std::size_t het = 0, het_ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const Counts c = count(gold[i], predicted[i], exclude_punct);
    total.tagged += c.tagged;
    total.tag_ok += c.tag_ok;
    total.scored += c.scored;
    total.head_ok += c.head_ok;
    total.label_ok += c.label_ok;
    r.total += gold[i].size();
    for (std::size_t j = 0; j < gold[i].size(); ++j) {
      const auto& g = gold[i].tokens[j];
      const auto p = predicted_hetero(predicted[i].tokens[j]);
      if (g.hetero && predicted[i].tokens[j].pred_hetero) {
        ++het;
        if (p && *p == *g.hetero) ++het_ok;
      }
    }
  }
  for (const auto& s : predicted) {
    for (const auto& t : s.tokens) {
      if (!predicted_tag(t).empty()) r.has_tags = true;
      if (predicted_head(t)) r.has_heads = true;
    }
  }
  r.tagged = total.tagged;
  r.scored = total.scored;
  r.excluded = r.total - r.scored;
  r.ta = percent(total.tag_ok, total.tagged);
  r.uas = percent(total.head_ok, total.scored);
  r.las = percent(total.label_ok, total.scored);
  if (het > 0) r.hetero_ta = percent(het_ok, het);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "TA=" << (r.has_tags ? fixed2(r.ta) : "n/a") << '\n';
  if (r.hetero_ta) os << "hetero_TA=" << fixed2(*r.hetero_ta) << '\n';
  os << "UAS=" << (r.has_heads ? fixed2(r.uas) : "n/a") << '\n'
     << "LAS=" << (r.has_heads ? fixed2(r.las) : "n/a") << '\n'
     << "tokens=" << r.total << '\n'
     << "scored=" << r.scored << '\n'
     << "excluded=" << r.excluded << '\n'
     << "decode=" << r.decode << '\n';
  return os.str();
}

double Adam::current_lr() const {
  return lr * std::pow(decay, static_cast<double>(t_ / std::max<std::size_t>(decay_steps, 1)));
}

void Adam::step(nn::ParameterStore& params) {
  const double rate = current_lr();
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (auto& e : params.trainable()) {
    if (!e.tensor->has_grad()) continue;
    auto& [m, v] = moments_[e.name];
    const std::size_t n = e.tensor->size();
    if (m.size() != n) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    const auto grad = e.tensor->grad();
    auto w = e.tensor->data();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      w[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

double clip_gradients(nn::ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& e : params.trainable()) {
    if (!e.tensor->has_grad()) continue;
    for (double g : e.tensor->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& e : params.trainable()) {
      if (!e.tensor->has_grad()) continue;
      for (double& g : e.tensor->mutable_grad()) g *= f;
    }
  }
  return norm;
}

bool EarlyStopper::observe(const std::vector<double>& key) {
  ++epoch_;
  if (!best_ || std::lexicographical_compare(best_->begin(), best_->end(), key.begin(), key.end())) {
    best_ = key;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string format_epoch(const EpochRecord& r, bool with_time) {
  std::ostringstream os;
  os << "epoch=" << r.epoch << " L_DEP=" << std::setprecision(10) << r.l_dep
     << " L_POS=" << r.l_pos << " L_POS'=" << r.l_pos_hetero << " dev_TA=" << fixed2(r.dev.ta)
     << " dev_UAS=" << fixed2(r.dev.uas) << " dev_LAS=" << fixed2(r.dev.las);
  if (r.dev.hetero_ta) os << " dev_hetero_TA=" << fixed2(*r.dev.hetero_ta);
  os << " best=" << (r.improved ? 1 : 0);
  if (with_time) os << " seconds=" << fixed2(r.seconds);
  return os.str();
}

std::vector<double> selection_key(const models::ModelSpec& spec, const EvalReport& r) {
  if (!spec.has_parser()) return {r.ta};
  return {r.las, r.ta};
}

namespace {

std::vector<corpus::EncodedSentence> encode_all(const models::Model& model,
                                                std::span<const Sentence> sentences,
                                                const nn::ContextLayers* context,
                                                const char* what) {
  if (model.uses_context()) {
    if (!context) throw ConfigError(std::string("the model needs context layers for the ") + what);
    if (context->sentences.size() != sentences.size()) {
      throw AlignmentError(std::string("context layers for the ") + what + " cover " +
                           std::to_string(context->sentences.size()) + " sentences, corpus has " +
                           std::to_string(sentences.size()));
    }
  }
  std::vector<corpus::EncodedSentence> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.push_back(model.vocab().encode(sentences[i]));
    if (model.uses_context()) out.back().context = &context->sentences[i];
  }
  return out;
}

using Batch = std::vector<const corpus::EncodedSentence*>;

std::vector<Batch> pack(const std::vector<corpus::EncodedSentence>& enc,
                        const std::vector<std::size_t>& order, std::size_t budget) {
  std::vector<Batch> out;
  Batch cur;
  std::size_t tokens = 0;
  for (std::size_t i : order) {
    cur.push_back(&enc[i]);
    tokens += enc[i].size();
    if (tokens >= budget) {
      out.push_back(std::move(cur));
      cur.clear();
      tokens = 0;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::vector<Sentence> predict(const models::Model& model, std::span<const Sentence> sentences,
                              decode::TreeDecoder decoder, const nn::ContextLayers* context) {
  const auto enc = encode_all(model, sentences, context, "input");
  std::vector<Sentence> out(sentences.begin(), sentences.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Gold annotation is dropped; input tags of a pipeline parser are kept as
    // its (externally) predicted tags.
    for (auto& t : out[i].tokens) {
      t.tag.clear();
      t.hetero.reset();
      t.head.reset();
      t.label.reset();
      t.pred_head.reset();
      t.pred_label.reset();
      if (!model.spec().consumes_tags()) {
        t.pred_tag.reset();
        t.pred_hetero.reset();
      }
    }
    model.apply_prediction(out[i], model.predict(enc[i], decoder));
  }
  return out;
}

TrainResult train(models::Model& model, const TrainData& data, const TrainOptions& options) {
  if (data.train.empty()) throw ValidationError("training corpus is empty");
  if (data.dev.empty()) throw ValidationError("development corpus is empty");
  const auto& spec = model.spec();
  const auto train_enc = encode_all(model, data.train, data.train_context ? &*data.train_context : nullptr,
                                    "training corpus");
  const bool use_hetero = spec.has_hetero_head() && !data.hetero.empty();
  std::vector<corpus::EncodedSentence> hetero_enc;
  if (use_hetero) {
    hetero_enc = encode_all(model, data.hetero,
                            data.hetero_context ? &*data.hetero_context : nullptr, "hetero corpus");
  }
  const nn::ContextLayers* dev_ctx = data.dev_context ? &*data.dev_context : nullptr;
  const std::size_t patience =
      options.patience != 0 ? options.patience : (spec.use_context_layers ? 50 : 100);

  Adam adam = options.optimizer;
  EarlyStopper stopper(patience);
  auto& params = model.params();
  params.zero_grad();
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (auto& e : params.entries()) best.push_back(e.tensor->storage());
  };

  const Rng root = Rng(options.seed).split("train");
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng er = root.split(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_enc.size());
    std::iota(order.begin(), order.end(), 0);
    er.shuffle(order);
    const auto tb = pack(train_enc, order, options.batch_tokens);
    std::vector<Batch> het;
    if (use_hetero) {
      std::vector<std::size_t> horder(hetero_enc.size());
      std::iota(horder.begin(), horder.end(), 0);
      er.shuffle(horder);
      const auto want = static_cast<std::size_t>(
          std::llround(options.hetero_ratio * static_cast<double>(train_enc.size())));
      horder.resize(std::min(horder.size(), want));
      het = pack(hetero_enc, horder, options.batch_tokens);
    }
    std::vector<const Batch*> schedule;
    for (std::size_t i = 0; i < std::max(tb.size(), het.size()); ++i) {
      if (i < tb.size()) schedule.push_back(&tb[i]);
      if (i < het.size()) schedule.push_back(&het[i]);
    }

    double dep_sum = 0, pos_sum = 0, het_sum = 0;
    std::size_t dep_n = 0, pos_n = 0, het_n = 0;
    for (std::size_t b = 0; b < schedule.size(); ++b) {
      Rng br = er.split("batch").split(static_cast<std::uint64_t>(b));
      ad::Graph g;
      const auto loss = model.joint_loss(g, *schedule[b], true, br);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: loss " + std::to_string(value) + " at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      dep_sum += loss.dep * static_cast<double>(loss.dep_tokens);
      pos_sum += loss.pos * static_cast<double>(loss.pos_tokens);
      het_sum += loss.pos_hetero * static_cast<double>(loss.hetero_tokens);
      dep_n += loss.dep_tokens;
      pos_n += loss.pos_tokens;
      het_n += loss.hetero_tokens;
      if (!g.needs_grad(loss.total.id)) continue;
      g.backward(loss.total);
      clip_gradients(params, options.clip);
      adam.step(params);
      params.zero_grad();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_dep = dep_n ? dep_sum / static_cast<double>(dep_n) : 0.0;
    rec.l_pos = pos_n ? pos_sum / static_cast<double>(pos_n) : 0.0;
    rec.l_pos_hetero = het_n ? het_sum / static_cast<double>(het_n) : 0.0;
    const auto dev_pred = predict(model, data.dev, options.dev_decoder, dev_ctx);
    rec.dev = evaluate(data.dev, dev_pred, options.exclude_punct, decode::to_string(options.dev_decoder));
    rec.improved = stopper.observe(selection_key(spec, rec.dev));
    if (rec.improved) {
      snapshot();
      result.best_epoch = epoch;
      result.best_dev = rec.dev;
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop_when && options.stop_when(rec)) break;
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  auto entries = params.entries();
  for (std::size_t i = 0; i < entries.size() && i < best.size(); ++i) {
    entries[i].tensor->storage() = best[i];
  }
  return result;
}

Metric parse_metric(std::string_view name) {
  if (name == "ta" || name == "TA") return Metric::ta;
  if (name == "uas" || name == "UAS") return Metric::uas;
  if (name == "las" || name == "LAS") return Metric::las;
  throw ConfigError("unknown metric '" + std::string(name) + "' (valid: ta|uas|las)");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::ta: return "TA";
    case Metric::uas: return "UAS";
    case Metric::las: return "LAS";
  }
  return "?";
}

SignificanceResult significance(std::span<const Sentence> gold, std::span<const Sentence> a,
                                std::span<const Sentence> b, Metric metric, bool exclude_punct,
                                std::size_t trials, std::uint64_t seed) {
  check_aligned(gold, a, "significance (system A)");
  check_aligned(gold, b, "significance (system B)");
  const std::size_t n = gold.size();
  std::vector<long long> ca(n), cb(n);
  long long den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Counts x = count(gold[i], a[i], exclude_punct);
    const Counts y = count(gold[i], b[i], exclude_punct);
    switch (metric) {
      case Metric::ta:
        ca[i] = static_cast<long long>(x.tag_ok);
        cb[i] = static_cast<long long>(y.tag_ok);
        den += static_cast<long long>(x.tagged);
        break;
      case Metric::uas:
        ca[i] = static_cast<long long>(x.head_ok);
        cb[i] = static_cast<long long>(y.head_ok);
        den += static_cast<long long>(x.scored);
        break;
      case Metric::las:
        ca[i] = static_cast<long long>(x.label_ok);
        cb[i] = static_cast<long long>(y.label_ok);
        den += static_cast<long long>(x.scored);
        break;
    }
  }
  SignificanceResult r;
  r.metric = metric;
  r.trials = trials;
  r.seed = seed;
  const long long sa = std::accumulate(ca.begin(), ca.end(), 0LL);
  const long long sb = std::accumulate(cb.begin(), cb.end(), 0LL);
  r.score_a = den ? 100.0 * static_cast<double>(sa) / static_cast<double>(den) : 0.0;
  r.score_b = den ? 100.0 * static_cast<double>(sb) / static_cast<double>(den) : 0.0;
  // Integer differences keep the comparison exact.
  const long long observed = std::llabs(sa - sb);
  Rng rng = Rng(seed).split("permutation");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    long long d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long long diff = ca[i] - cb[i];
      d += (rng.next_u64() & 1U) ? -diff : diff;
    }
    if (std::llabs(d) >= observed) ++hits;
  }
  r.p_value = static_cast<double>(hits + 1) / static_cast<double>(trials + 1);
  return r;
}

std::string format_significance(const SignificanceResult& r) {
  std::ostringstream os;
  os << "test=" << r.test << " (sentence-level, two-sided, add-one smoothed)\n"
     << "metric=" << to_string(r.metric) << '\n'
     << "A=" << fixed2(r.score_a) << '\n'
     << "B=" << fixed2(r.score_b) << '\n'
     << "delta=" << fixed2(r.score_b - r.score_a) << '\n'
     << "trials=" << r.trials << '\n'
     << "seed=" << r.seed << '\n'
     << "p=" << std::setprecision(6) << r.p_value << '\n';
  return os.str();
}

std::vector<PosDeltaRow> per_pos_delta(std::span<const Sentence> gold, std::span<const Sentence> a,
                                       std::span<const Sentence> b, bool exclude_punct) {
  check_aligned(gold, a, "per-POS analysis (system A)");
  check_aligned(gold, b, "per-POS analysis (system B)");
  struct Acc {
    std::size_t tokens = 0, arcs = 0, ta_a = 0, ta_b = 0, las_a = 0, las_b = 0;
  };
  std::map<std::string, Acc> acc;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = 0; j < gold[i].size(); ++j) {
      const auto& g = gold[i].tokens[j];
      if (g.tag.empty()) continue;
      Acc& x = acc[g.tag];
      ++x.tokens;
      if (predicted_tag(a[i].tokens[j]) == g.tag) ++x.ta_a;
      if (predicted_tag(b[i].tokens[j]) == g.tag) ++x.ta_b;
      if (exclude_punct && g.is_punct) continue;
      ++x.arcs;
      if (label_correct(g, a[i].tokens[j])) ++x.las_a;
      if (label_correct(g, b[i].tokens[j])) ++x.las_b;
    }
  }
  std::vector<PosDeltaRow> rows;
  for (const auto& [tag, x] : acc) {
    PosDeltaRow r;
    r.tag = tag;
    r.tokens = x.tokens;
    r.arcs = x.arcs;
    r.ta_a = percent(x.ta_a, x.tokens);
    r.ta_b = percent(x.ta_b, x.tokens);
    r.las_a = percent(x.las_a, x.arcs);
    r.las_b = percent(x.las_b, x.arcs);
    rows.push_back(r);
  }
  return rows;
}

PatternTable pattern_table(std::span<const Sentence> gold, std::span<const Sentence> predicted,
                           bool exclude_punct) {
  check_aligned(gold, predicted, "pattern analysis");
  struct Acc {
    std::size_t support = 0, head = 0, label = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  Acc right, wrong;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = 0; j < gold[i].size(); ++j) {
      const auto& g = gold[i].tokens[j];
      const auto& p = predicted[i].tokens[j];
      if (exclude_punct && g.is_punct) continue;
      const std::string y = predicted_tag(p);
      Acc& x = acc[{g.tag, y}];
      Acc& side = y == g.tag ? right : wrong;
      const bool h = head_correct(g, p), l = label_correct(g, p);
      for (Acc* t : {&x, &side}) {
        ++t->support;
        t->head += h;
        t->label += l;
      }
    }
  }
  auto row = [](std::string gx, std::string py, const Acc& x) {
    return PatternRow{std::move(gx), std::move(py), x.support, percent(x.head, x.support),
                      percent(x.label, x.support)};
  };
  PatternTable t;
  for (const auto& [key, x] : acc) t.rows.push_back(row(key.first, key.second, x));
  t.correct_tag = row("*", "=", right);
  t.wrong_tag = row("*", "!=", wrong);
  return t;
}

std::string format_pos_delta(const std::vector<PosDeltaRow>& rows) {
  std::ostringstream os;
  os << "tag\ttokens\tarcs\tTA_A\tTA_B\tdelta_TA\tLAS_A\tLAS_B\tdelta_LAS\n";
  for (const auto& r : rows) {
    os << r.tag << '\t' << r.tokens << '\t' << r.arcs << '\t' << fixed2(r.ta_a) << '\t'
       << fixed2(r.ta_b) << '\t' << fixed2(r.delta_ta()) << '\t' << fixed2(r.las_a) << '\t'
       << fixed2(r.las_b) << '\t' << fixed2(r.delta_las()) << '\n';
  }
  return os.str();
}

std::string format_patterns(const PatternTable& t) {
  std::ostringstream os;
  os << "gold\tpredicted\tsupport\tUAS\tLAS\n";
  auto line = [&](const PatternRow& r) {
    os << r.gold_tag << '\t' << r.pred_tag << '\t' << r.support << '\t' << fixed2(r.uas) << '\t'
       << fixed2(r.las) << '\n';
  };
  for (const auto& r : t.rows) line(r);
  line(t.correct_tag);
  line(t.wrong_tag);
  return os.str();
}

}  // namespace posdep::train
