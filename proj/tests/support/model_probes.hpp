#pragma once

// Gradient probes over whole models.

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "posdep/context_layers.hpp"
#include "posdep/models.hpp"

namespace posdep::testing {

struct ModelFixture {
  std::vector<corpus::Sentence> treebank;
  std::vector<corpus::Sentence> hetero;
  std::optional<nn::ContextLayers> treebank_context, hetero_context;
  std::unique_ptr<models::Model> model;
  std::vector<corpus::EncodedSentence> encoded_treebank, encoded_hetero;
};

// Very small dimensions for probing.
models::ModelSpec tiny_spec(models::Framework f, bool hetero = false, bool context = false);

// Builds a model over `sentences` generated sentences (2 tokens each when
// `two_tokens`), with heterogeneous sentences when the spec asks for them.
ModelFixture make_fixture(const models::ModelSpec& spec, std::size_t sentences, bool two_tokens,
                          std::uint64_t seed);

// Trainable parameters with a nonzero gradient from one loss term.
std::set<std::string> gradient_support(ModelFixture& f, models::LossTerm term);

// Parameter names whose prefix is in `prefixes`.
std::set<std::string> names_with_prefix(models::Model& m, const std::vector<std::string>& prefixes);

// Expected support of each loss term under the sharing contract.
std::set<std::string> expected_support(models::Model& m, models::LossTerm term);

// Central differences on `probes` random coordinates of trainable tensors for
// the joint loss in train mode (masks fixed by seed).
GradCheck end_to_end_gradcheck(ModelFixture& f, std::size_t probes, std::uint64_t seed);

}  // namespace posdep::testing
