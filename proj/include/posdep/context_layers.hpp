#pragma once

// Binary file of externally computed per-layer contextual vectors.
//
//   header:  "CTXL" | version u16 | L u16 | d u32
//   record:  sentence u32 | token u32 | L*d float32
//
// All integers and floats are little-endian. Token indices are 0-based over
// the sentence's real tokens (the pseudo-root has no record). Vectors are
// expected to be word-level already (e.g. averaged over a word's pieces).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posdep/autodiff.hpp"

namespace posdep::nn {

inline constexpr std::uint16_t kContextFormatVersion = 1;

struct ContextLayers {
  std::size_t layer_count = 0;
  std::size_t dim = 0;
  // One [L x n x d] tensor per sentence.
  std::vector<ad::Tensor> sentences;
};

// Every (sentence, token) in `sentence_lengths` must be present.
ContextLayers read_context_layers(const std::string& path,
                                  std::span<const std::size_t> sentence_lengths);

void write_context_layers(const std::string& path, const ContextLayers& layers);

}  // namespace posdep::nn
