#pragma once

// k-fold tagging of a training treebank: every sentence receives tags from a
// tagger that never saw it.

#include <cstdint>
#include <span>
#include <vector>

#include "posdep/corpus.hpp"
#include "posdep/model_spec.hpp"
#include "posdep/train_eval.hpp"

namespace posdep::train {

struct JackknifeOptions {
  std::size_t k = 5;
  std::uint64_t seed = 1;
  // Framework is forced to basic-tagger.
  models::ModelSpec tagger;
  TrainOptions training;
  decode::TreeDecoder decoder = decode::TreeDecoder::mst;
};

struct JackknifeResult {
  // Input sentences with pred_tag (and pred_hetero) attached.
  std::vector<Sentence> tagged;
  // Sentence indices per fold.
  std::vector<std::vector<std::size_t>> folds;
  // Sentence indices each fold's tagger was trained on.
  std::vector<std::vector<std::size_t>> training;
};

// Shuffles indices with `seed` and cuts them into k contiguous folds whose
// sizes differ by at most one.
std::vector<std::vector<std::size_t>> make_folds(std::size_t count, std::size_t k,
                                                 std::uint64_t seed);

JackknifeResult jackknife_tags(std::span<const Sentence> treebank, const JackknifeOptions& options,
                               std::span<const Sentence> hetero = {});

}  // namespace posdep::train
