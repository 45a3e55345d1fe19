#include "posdep/jackknife.hpp"

#include <numeric>

#include "posdep/error.hpp"

namespace posdep::train {

std::vector<std::vector<std::size_t>> make_folds(std::size_t count, std::size_t k,
                                                 std::uint64_t seed) {
  if (k < 2) throw ConfigError("jackknifing needs k >= 2");
  if (count < k) {
    throw ValidationError("cannot split " + std::to_string(count) + " sentences into " +
                          std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).split("folds");
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t at = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = count / k + (f < count % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                    order.begin() + static_cast<std::ptrdiff_t>(at + size));
    at += size;
  }
  return folds;
}

JackknifeResult jackknife_tags(std::span<const Sentence> treebank, const JackknifeOptions& options,
                               std::span<const Sentence> hetero) {
  JackknifeResult r;
  r.folds = make_folds(treebank.size(), options.k, options.seed);
  r.tagged.assign(treebank.begin(), treebank.end());
  models::ModelSpec spec = options.tagger;
  spec.framework = models::Framework::basic_tagger;
  spec.use_context_layers = false;
  spec.use_hetero = spec.use_hetero && !hetero.empty();
  std::vector<bool> held(treebank.size());
  for (std::size_t f = 0; f < options.k; ++f) {
    std::fill(held.begin(), held.end(), false);
    for (std::size_t i : r.folds[f]) held[i] = true;
    TrainData data;
    std::vector<std::size_t> seen;
    for (std::size_t i = 0; i < treebank.size(); ++i) {
      if (held[i]) continue;
      seen.push_back(i);
      data.train.push_back(treebank[i]);
    }
    data.dev = data.train;
    if (spec.use_hetero) data.hetero.assign(hetero.begin(), hetero.end());
    spec.seed = Rng(options.seed).split("fold").split(static_cast<std::uint64_t>(f)).next_u64() >> 1;
    const auto vocab = corpus::Vocab::build(data.train, data.hetero);
    models::Model model(spec, vocab);
    TrainOptions topt = options.training;
    topt.seed = spec.seed;
    train(model, data, topt);

    std::vector<Sentence> held_out;
    for (std::size_t i : r.folds[f]) held_out.push_back(treebank[i]);
    const auto pred = predict(model, held_out, options.decoder);
    for (std::size_t j = 0; j < r.folds[f].size(); ++j) {
      auto& out = r.tagged[r.folds[f][j]];
      for (std::size_t t = 0; t < out.size(); ++t) {
        out.tokens[t].pred_tag = pred[j].tokens[t].pred_tag;
        out.tokens[t].pred_hetero = pred[j].tokens[t].pred_hetero;
      }
    }
    r.training.push_back(std::move(seen));
  }
  return r;
}

}  // namespace posdep::train
