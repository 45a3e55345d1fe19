#pragma once

// Small generated treebanks for tests.

#include <cstdint>
#include <vector>

#include "posdep/context_layers.hpp"
#include "posdep/corpus.hpp"

namespace posdep::testing {

struct SyntheticOptions {
  std::size_t sentences = 20;
  std::uint64_t seed = 7;
  // Lexicon size per open class.
  std::size_t lexicon = 6;
  // Probability of an adjective before a noun and of a trailing prepositional phrase.
  double adjective = 0.3;
  double preposition = 0.5;
  // Words that can be both a noun and a verb.
  bool ambiguous = false;
};

// English-like sentences "DT (JJ) NN VBZ DT (JJ) NN (IN DT NN) ." with
// gold heads, labels and punctuation marks.
std::vector<corpus::Sentence> synthetic_treebank(const SyntheticOptions& options);

// Same sentences under a coarser tag set, as a 2-column tag corpus.
std::vector<corpus::Sentence> synthetic_hetero(const SyntheticOptions& options);

nn::ContextLayers random_context(std::span<const corpus::Sentence> sentences, std::size_t layers,
                                 std::size_t dim, std::uint64_t seed);

}  // namespace posdep::testing
