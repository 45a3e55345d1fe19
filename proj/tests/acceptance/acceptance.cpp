// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "metric_cases.hpp"
#include "model_probes.hpp"
#include "op_cases.hpp"
#include "posdep/decode.hpp"
#include "posdep/jackknife.hpp"
#include "posdep/train_eval.hpp"
#include "posdep/tree.hpp"
#include "synthetic.hpp"

using namespace posdep;
using models::Framework;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

const std::vector<Framework> kFrameworks{Framework::basic_tagger, Framework::basic_parser,
                                         Framework::pipeline_parser, Framework::share_loose,
                                         Framework::share_tight, Framework::stack};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  constexpr std::size_t kTrials = 100;
  double op_worst = 0.0;
  std::string op_worst_name;
  Rng rng(2024);
  for (const auto& c : testing::op_cases()) {
    Rng r = rng.split(c.name);
    for (std::size_t t = 0; t < kTrials; ++t) {
      const auto g = c.trial(r);
      if (g.max_error > op_worst) {
        op_worst = g.max_error;
        op_worst_name = c.name;
      }
    }
  }
  double e2e_worst = 0.0;
  std::string e2e_worst_name;
  std::size_t configs = 0;
  for (auto fw : kFrameworks) {
    for (int variant = 0; variant < 3; ++variant) {
      const bool hetero = variant >= 1, context = variant == 2;
      auto f = testing::make_fixture(testing::tiny_spec(fw, hetero, context), 2, true,
                                     40 + static_cast<std::uint64_t>(variant));
      const auto g = testing::end_to_end_gradcheck(f, kTrials, 17 + configs);
      ++configs;
      if (g.max_error > e2e_worst || e2e_worst_name.empty()) {
        e2e_worst = std::max(e2e_worst, g.max_error);
        e2e_worst_name = models::to_string(fw) + (hetero ? "+hetero" : "") + (context ? "+context" : "");
      }
    }
  }
  const double sec = seconds_since(t0);
  std::ostringstream os;
  os << testing::op_cases().size() << " ops x " << kTrials << " trials, worst "
     << fmt("%.2e", op_worst) << " (" << op_worst_name << "); " << configs
     << " end-to-end configs x " << kTrials << " probes, worst " << fmt("%.2e", e2e_worst)
     << "; " << fmt("%.1f", sec) << "s";
  return {op_worst < 1e-4 && e2e_worst < 1e-3 && sec < 120.0, os.str()};
}

Outcome mst_oracle() {
  const auto t0 = Clock::now();
  Rng rng(7);
  std::size_t mismatches = 0, total = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int t = 0; t < 200; ++t) {
      const auto scores = testing::random_tensor({n, n + 1}, rng, -5.0, 5.0);
      const auto heads = decode::decode_tree_mst(scores);
      const auto best = testing::brute_force_mst(scores);
      ++total;
      if (!testing::valid_tree(heads) ||
          std::abs(testing::tree_total(scores, heads) - best.total) > 1e-9) {
        ++mismatches;
      }
    }
  }
  const double sec = seconds_since(t0);
  return {mismatches == 0 && sec < 60.0,
          std::to_string(total) + " matrices, " + std::to_string(mismatches) + " mismatches, " +
              fmt("%.2f", sec) + "s"};
}

Outcome well_formedness() {
  Rng rng(11);
  std::size_t failures = 0;
  constexpr int kDecodes = 10000;
  for (int t = 0; t < kDecodes; ++t) {
    const std::size_t n = 1 + rng.below(12);
    ad::Tensor scores;
    switch (t % 4) {
      case 0: scores = testing::random_tensor({n, n + 1}, rng); break;
      case 1:  // many ties
        scores = testing::random_tensor({n, n + 1}, rng);
        for (auto& v : scores.data()) v = std::round(v);
        break;
      case 2:  // the root is the best head of every token
        scores = testing::random_tensor({n, n + 1}, rng);
        for (std::size_t i = 0; i < n; ++i) scores.at(i, 0) += 10.0;
        break;
      default:  // strong 2-cycles
        scores = testing::random_tensor({n, n + 1}, rng, -1.0, 0.0);
        for (std::size_t i = 0; i + 1 < n; i += 2) {
          scores.at(i, i + 2) = 5.0;
          scores.at(i + 1, i + 1) = 5.0;
        }
        break;
    }
    const auto heads = decode::decode_tree_mst(scores);
    if (heads.size() != n || !testing::valid_tree(heads) || !is_arborescence(heads)) ++failures;
  }
  return {failures == 0,
          std::to_string(kDecodes) + " decodes (n <= 12), " + std::to_string(failures) + " failures"};
}

models::ModelSpec overfit_spec(Framework fw) {
  models::ModelSpec spec;
  spec.framework = fw;
  spec.word_dim = 32;
  spec.tag_dim = 16;
  spec.char_dim = 16;
  spec.char_out = 32;
  spec.lstm_hidden = 48;
  spec.lstm_layers = 3;
  spec.tag_mlp = 48;
  spec.arc_mlp = 64;
  spec.label_mlp = 32;
  return spec;
}

Outcome overfit() {
  const auto treebank =
      corpus::read_conll(std::string(POSDEP_DATA_DIR) + "/toy/train.conllx", corpus::Profile::conllx);
  bool pass = true;
  std::ostringstream os;
  os << treebank.size() << " sentences;";
  for (auto fw : kFrameworks) {
    const auto spec = overfit_spec(fw);
    auto data = treebank;
    // A pipeline parser reads tags; here they are the gold ones.
    if (spec.consumes_tags()) {
      for (auto& s : data) {
        for (auto& t : s.tokens) t.pred_tag = t.tag;
      }
    }
    models::Model model(spec, corpus::Vocab::build(data, {}, 1));
    train::TrainData d;
    d.train = data;
    d.dev = data;
    train::TrainOptions o;
    o.max_epochs = 500;
    o.batch_tokens = 40;
    o.patience = 500;
    auto reached = [&](const train::EvalReport& r) {
      return (!spec.has_tagger() || r.ta >= 99.0) && (!spec.has_parser() || r.uas >= 99.0);
    };
    o.stop_when = [&](const train::EpochRecord& r) { return reached(r.dev); };
    const auto t0 = Clock::now();
    const auto result = train::train(model, d, o);
    const double sec = seconds_since(t0);
    const auto& last = result.log.back().dev;
    const bool ok = reached(last) && sec < 600.0;
    pass = pass && ok;
    os << ' ' << models::to_string(fw) << " epochs=" << result.log.size();
    if (spec.has_tagger()) os << " TA=" << fmt("%.2f", last.ta);
    if (spec.has_parser()) os << " UAS=" << fmt("%.2f", last.uas);
    os << ' ' << fmt("%.0f", sec) << "s" << (ok ? "" : " (FAILED)") << ';';
  }
  return {pass, os.str()};
}

Outcome sharing_audit() {
  std::size_t checks = 0, violations = 0;
  std::string first;
  for (auto fw : kFrameworks) {
    for (int variant = 0; variant < 3; ++variant) {
      const bool hetero = variant >= 1, context = variant == 2;
      auto f = testing::make_fixture(testing::tiny_spec(fw, hetero, context), 3, false,
                                     60 + static_cast<std::uint64_t>(variant));
      for (auto term : {models::LossTerm::dep, models::LossTerm::pos, models::LossTerm::pos_hetero}) {
        ++checks;
        const auto got = testing::gradient_support(f, term);
        const auto want = testing::expected_support(*f.model, term);
        if (got != want) {
          ++violations;
          if (first.empty()) {
            first = models::to_string(fw) + " term " + std::to_string(static_cast<int>(term));
          }
        }
      }
    }
  }
  return {violations == 0, std::to_string(checks) + " (framework, variant, loss term) probes, " +
                               std::to_string(violations) + " violations" +
                               (first.empty() ? "" : " first: " + first)};
}

Outcome metric_oracle() {
  std::size_t bad = 0;
  std::string first;
  const auto cases = testing::metric_cases();
  for (const auto& c : cases) {
    const auto r = train::evaluate(c.gold, c.pred, c.exclude_punct);
    const bool ok = fmt("%.2f", r.ta) == fmt("%.2f", c.ta) && fmt("%.2f", r.uas) == fmt("%.2f", c.uas) &&
                    fmt("%.2f", r.las) == fmt("%.2f", c.las);
    if (!ok) {
      ++bad;
      if (first.empty()) first = " first: " + c.name;
    }
  }
  return {bad == 0 && cases.size() >= 10,
          std::to_string(cases.size()) + " cases, " + std::to_string(bad) + " mismatches" + first};
}

Outcome additivity() {
  double worst = 0.0;
  bool zero_ok = true;
  std::size_t batches = 0;
  Rng rng(99);
  const std::vector<Framework> joint{Framework::share_loose, Framework::share_tight, Framework::stack};
  for (auto fw : joint) {
    auto f = testing::make_fixture(testing::tiny_spec(fw, true), 6, false, 70);
    const std::size_t per = fw == Framework::stack ? 18 : 16;
    for (std::size_t b = 0; b < per; ++b, ++batches) {
      std::vector<const corpus::EncodedSentence*> batch;
      const int mode = static_cast<int>(b % 3);  // mixed, treebank only, hetero only
      if (mode != 2) {
        for (const auto& e : f.encoded_treebank) if (rng.uniform() < 0.6) batch.push_back(&e);
        if (batch.empty()) batch.push_back(&f.encoded_treebank[0]);
      }
      if (mode != 1) {
        for (const auto& e : f.encoded_hetero) if (rng.uniform() < 0.6) batch.push_back(&e);
        if (mode == 2 && batch.empty()) batch.push_back(&f.encoded_hetero[0]);
      }
      ad::Graph g;
      Rng unused(1);
      const auto l = f.model->joint_loss(g, batch, false, unused);
      const double dep = f.model->loss_term(batch, models::LossTerm::dep);
      const double pos = f.model->loss_term(batch, models::LossTerm::pos);
      const double het = f.model->loss_term(batch, models::LossTerm::pos_hetero);
      worst = std::max(worst, std::abs(l.total.item() - (dep + pos + het)));
      if (mode == 1 && het != 0.0) zero_ok = false;
      if (mode == 2 && (dep != 0.0 || pos != 0.0)) zero_ok = false;
    }
  }
  return {worst < 1e-12 && zero_ok && batches >= 50,
          std::to_string(batches) + " batches, max |L - sum| = " + fmt("%.2e", worst) +
              (zero_ok ? ", absent terms exactly 0" : ", absent term nonzero")};
}

Outcome jackknife() {
  testing::SyntheticOptions so;
  so.sentences = 100;
  so.seed = 31;
  const auto tb = testing::synthetic_treebank(so);
  train::JackknifeOptions o;
  o.k = 5;
  o.seed = 5;
  o.tagger = testing::tiny_spec(Framework::basic_tagger);
  o.training.max_epochs = 1;
  const auto r = train::jackknife_tags(tb, o);
  std::vector<int> seen(tb.size(), 0);
  bool ok = r.folds.size() == 5 && r.training.size() == 5 && r.tagged.size() == tb.size();
  std::size_t leaks = 0;
  for (std::size_t f = 0; f < r.folds.size() && ok; ++f) {
    std::set<std::size_t> held(r.folds[f].begin(), r.folds[f].end());
    std::set<std::size_t> trained(r.training[f].begin(), r.training[f].end());
    for (auto i : held) ++seen[i];
    for (auto i : trained) if (held.count(i)) ++leaks;
    if (held.size() + trained.size() != tb.size()) ok = false;
    if (r.folds[f].size() != 20) ok = false;
  }
  for (int c : seen) if (c != 1) ok = false;
  std::size_t untagged = 0;
  for (std::size_t i = 0; i < tb.size(); ++i) {
    if (r.tagged[i].size() != tb[i].size()) ok = false;
    for (const auto& t : r.tagged[i].tokens) untagged += !t.pred_tag.has_value();
  }
  ok = ok && leaks == 0 && untagged == 0;
  return {ok, "100 sentences, k=5, fold sizes 20, " + std::to_string(leaks) +
                  " held-out sentences in their own tagger's training set, " +
                  std::to_string(untagged) + " untagged tokens"};
}

Outcome directional() {
  testing::SyntheticOptions so;
  so.ambiguous = true;
  so.lexicon = 40;
  so.sentences = 1500;
  so.seed = 101;
  const auto tb = testing::synthetic_treebank(so);
  so.sentences = 300;
  so.seed = 202;
  const auto dev = testing::synthetic_treebank(so);
  std::vector<std::vector<corpus::Sentence>> preds;
  std::vector<double> las;
  for (auto fw : {Framework::basic_parser, Framework::stack}) {
    auto spec = overfit_spec(fw);
    spec.lstm_layers = 2;
    models::Model model(spec, corpus::Vocab::build(tb, {}));
    train::TrainData d;
    d.train = tb;
    d.dev = dev;
    train::TrainOptions o;
    o.max_epochs = 4;
    o.batch_tokens = 500;
    o.exclude_punct = true;
    train::train(model, d, o);
    preds.push_back(train::predict(model, dev, decode::TreeDecoder::mst));
    las.push_back(train::evaluate(dev, preds.back(), true).las);
  }
  const auto sig = train::significance(dev, preds[0], preds[1], train::Metric::las, true, 10000, 1);
  const bool reported = std::isfinite(las[0]) && std::isfinite(las[1]) && sig.p_value > 0.0 &&
                        sig.p_value <= 1.0;
  return {reported, "reported only: dev LAS Basic=" + fmt("%.2f", las[0]) +
                        " Stack=" + fmt("%.2f", las[1]) + " p=" + fmt("%.4f", sig.p_value) +
                        " (1500 train / 300 dev synthetic sentences with noun/verb ambiguity)"};
}

Outcome layer_attention() {
  Rng rng(13);
  double mean_err = 0.0, zero_err = 0.0, sum_err = 0.0;
  std::size_t zero_weight_violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = 1 + rng.below(12), n = 1 + rng.below(6),
                      d = 1 + rng.below(5);
    nn::ParameterStore store;
    nn::LayerAttention att(store, "att", L, 0.3);
    const auto layers = testing::random_tensor({L, n, d}, rng);
    {
      ad::Graph g;
      const auto out = att.forward(g, layers, false, rng).value();
      for (std::size_t i = 0; i < n * d; ++i) {
        double avg = 0.0;
        for (std::size_t l = 0; l < L; ++l) avg += layers[l * n * d + i];
        avg /= static_cast<double>(L);
        mean_err = std::max(mean_err, std::abs(out[i] - avg));
      }
    }
    att.gamma()[0] = 0.0;
    for (auto& s : att.layer_scores().data()) s = rng.uniform() * 4.0 - 2.0;
    {
      ad::Graph g;
      for (double v : att.forward(g, layers, true, rng).value().data()) {
        zero_err = std::max(zero_err, std::abs(v));
      }
    }
    const auto survivors = att.sample_survivors(true, rng);
    const auto w = att.mixture_weights(survivors);
    const std::set<int> kept(survivors.begin(), survivors.end());
    double total = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) {
      total += w[l];
      if (!kept.count(static_cast<int>(l)) && w[l] != 0.0) ++zero_weight_violations;
    }
    sum_err = std::max(sum_err, std::abs(total - 1.0));
  }
  return {mean_err <= 1e-12 && zero_err == 0.0 && sum_err <= 1e-12 && zero_weight_violations == 0,
          "200 trials: |uniform - mean| " + fmt("%.1e", mean_err) + ", gamma=0 max " +
              fmt("%.1e", zero_err) + ", |sum w - 1| " + fmt("%.1e", sum_err) + ", " +
              std::to_string(zero_weight_violations) + " dropped layers with weight"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"MST oracle", mst_oracle},
      {"tree well-formedness", well_formedness},
      {"overfit check", overfit},
      {"sharing audit", sharing_audit},
      {"metric oracle", metric_oracle},
      {"joint-loss additivity", additivity},
      {"jackknife contract", jackknife},
      {"directional smoke check", directional},
      {"layer-attention properties", layer_attention},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed ? 1 : 0;
}
