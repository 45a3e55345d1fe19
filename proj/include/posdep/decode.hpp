#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posdep/autodiff.hpp"

namespace posdep::decode {

enum class TreeDecoder { mst, greedy };

TreeDecoder parse_decoder(const std::string& name);
std::string to_string(TreeDecoder d);

struct ParseResult {
  // Per dependent 1..n; head 0 is the pseudo-root.
  std::vector<int> heads;
  std::vector<int> labels;
  std::vector<int> tags;
  std::optional<std::vector<int>> hetero_tags;
  // [n x (n+1)] arc scores, kept for analysis.
  ad::Tensor arc_scores;
};

// Row-wise argmax; ties go to the lowest id.
std::vector<int> decode_tags(const ad::Tensor& logits);

// Per-dependent argmax over heads (self-attachment excluded). The result may
// contain cycles or several root children.
std::vector<int> decode_tree_greedy(const ad::Tensor& scores);

// Maximum spanning arborescence rooted at 0 with exactly one root child
// (Chu-Liu-Edmonds with recursive cycle contraction). scores is [n x (n+1)]:
// row i-1 scores the heads 0..n of dependent i.
std::vector<int> decode_tree_mst(const ad::Tensor& scores);

double tree_score(const ad::Tensor& scores, std::span<const int> heads);

// label_scores is [n x (n+1) x L]; each dependent takes the best label at its
// chosen head column.
std::vector<int> assign_labels(const ad::Tensor& label_scores, std::span<const int> heads);

}  // namespace posdep::decode
