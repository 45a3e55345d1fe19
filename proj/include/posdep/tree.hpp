#pragma once

#include <optional>
#include <span>
#include <string>

namespace posdep {

// heads[i] is the head of token i+1 (0 = pseudo-root). Returns a description
// of the first defect, or nullopt when the heads form an arborescence rooted
// at 0 with exactly one child of the root.
std::optional<std::string> tree_defect(std::span<const int> heads);

inline bool is_arborescence(std::span<const int> heads) { return !tree_defect(heads); }

}  // namespace posdep
