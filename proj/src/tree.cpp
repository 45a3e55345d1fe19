#include "posdep/tree.hpp"

#include <vector>

namespace posdep {

std::optional<std::string> tree_defect(std::span<const int> heads) {
  const int n = static_cast<int>(heads.size());
  if (n == 0) return "empty sentence";
  int root_children = 0;
  for (int d = 1; d <= n; ++d) {
    const int h = heads[static_cast<std::size_t>(d - 1)];
    if (h < 0 || h > n) return "head " + std::to_string(h) + " of token " + std::to_string(d) + " out of range";
    if (h == d) return "token " + std::to_string(d) + " is its own head";
    if (h == 0) ++root_children;
  }
  if (root_children == 0) return "no token attached to the root";
  if (root_children > 1) return std::to_string(root_children) + " tokens attached to the root";
  // every token must reach 0 without revisiting a node
  std::vector<int> state(static_cast<std::size_t>(n + 1), 0);  // 0 new, 1 on path, 2 done
  state[0] = 2;
  for (int start = 1; start <= n; ++start) {
    std::vector<int> path;
    int cur = start;
    while (state[static_cast<std::size_t>(cur)] == 0) {
      state[static_cast<std::size_t>(cur)] = 1;
      path.push_back(cur);
      cur = heads[static_cast<std::size_t>(cur - 1)];
    }
    if (state[static_cast<std::size_t>(cur)] == 1) {
      return "cycle through token " + std::to_string(cur);
    }
    for (int v : path) state[static_cast<std::size_t>(v)] = 2;
  }
  return std::nullopt;
}

}  // namespace posdep
