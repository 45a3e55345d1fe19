#include "posdep/decode.hpp"

#include <cmath>
#include <limits>

#include "posdep/error.hpp"

namespace posdep::decode {

TreeDecoder parse_decoder(const std::string& name) {
  if (name == "mst") return TreeDecoder::mst;
  if (name == "greedy") return TreeDecoder::greedy;
  throw ConfigError("unknown decoder '" + name + "' (expected mst|greedy)");
}

std::string to_string(TreeDecoder d) { return d == TreeDecoder::mst ? "mst" : "greedy"; }

std::vector<int> decode_tags(const ad::Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t check_arc_shape(const ad::Tensor& scores) {
  if (scores.rank() != 2 || scores.cols() != scores.rows() + 1) {
    throw ShapeError("arc scores must be [n x (n+1)], got " + ad::shape_str(scores.shape()));
  }
  return scores.rows();
}

using Matrix = std::vector<std::vector<double>>;  // m[dep][head]

// Unconstrained maximum arborescence rooted at node 0 of a dense graph.
std::vector<int> chu_liu_edmonds(const Matrix& s) {
  const int m = static_cast<int>(s.size());
  std::vector<int> head(static_cast<std::size_t>(m), -1);
  for (int d = 1; d < m; ++d) {
    int best = -1;
    for (int h = 0; h < m; ++h) {
      if (h == d) continue;
      if (best < 0 || s[d][h] > s[d][best]) best = h;
    }
    head[static_cast<std::size_t>(d)] = best;
  }

  // look for a cycle among the greedy choices
  std::vector<int> color(static_cast<std::size_t>(m), 0);
  std::vector<int> cycle;
  for (int start = 1; start < m && cycle.empty(); ++start) {
    std::vector<int> path;
    int v = start;
    while (v != 0 && color[static_cast<std::size_t>(v)] == 0) {
      color[static_cast<std::size_t>(v)] = start;
      path.push_back(v);
      v = head[static_cast<std::size_t>(v)];
    }
    if (v != 0 && color[static_cast<std::size_t>(v)] == start) {
      int u = v;
      do {
        cycle.push_back(u);
        u = head[static_cast<std::size_t>(u)];
      } while (u != v);
    }
  }
  if (cycle.empty()) return head;

  std::vector<bool> in_cycle(static_cast<std::size_t>(m), false);
  for (int v : cycle) in_cycle[static_cast<std::size_t>(v)] = true;
  // contracted graph: outside nodes keep their relative order, the cycle
  // becomes the last node
  std::vector<int> to_new(static_cast<std::size_t>(m), -1), to_old;
  for (int v = 0; v < m; ++v) {
    if (!in_cycle[static_cast<std::size_t>(v)]) {
      to_new[static_cast<std::size_t>(v)] = static_cast<int>(to_old.size());
      to_old.push_back(v);
    }
  }
  const int c = static_cast<int>(to_old.size());
  const int mc = c + 1;
  Matrix t(static_cast<std::size_t>(mc), std::vector<double>(static_cast<std::size_t>(mc), kNegInf));
  // entering the cycle at v from u: which v realizes the best contracted score
  std::vector<int> enter_at(static_cast<std::size_t>(mc), -1);
  // leaving the cycle towards w: which cycle node is the head
  std::vector<int> leave_from(static_cast<std::size_t>(mc), -1);
  for (int nd = 1; nd < c; ++nd) {
    const int d = to_old[static_cast<std::size_t>(nd)];
    for (int nh = 0; nh < c; ++nh) {
      if (nh != nd) t[nd][nh] = s[d][to_old[static_cast<std::size_t>(nh)]];
    }
    double best = kNegInf;
    int arg = -1;
    for (int v : cycle) {
      if (arg < 0 || s[d][v] > best) {
        best = s[d][v];
        arg = v;
      }
    }
    t[nd][c] = best;
    leave_from[static_cast<std::size_t>(nd)] = arg;
  }
  for (int nh = 0; nh < c; ++nh) {
    const int u = to_old[static_cast<std::size_t>(nh)];
    double best = kNegInf;
    int arg = -1;
    for (int v : cycle) {
      const double val = s[v][u] - s[v][head[static_cast<std::size_t>(v)]];
      if (arg < 0 || val > best) {
        best = val;
        arg = v;
      }
    }
    t[c][nh] = best;
    enter_at[static_cast<std::size_t>(nh)] = arg;
  }

  const std::vector<int> sub = chu_liu_edmonds(t);
  std::vector<int> result = head;  // cycle nodes keep their cycle heads by default
  for (int nd = 1; nd < c; ++nd) {
    const int d = to_old[static_cast<std::size_t>(nd)];
    const int nh = sub[static_cast<std::size_t>(nd)];
    result[static_cast<std::size_t>(d)] =
        nh == c ? leave_from[static_cast<std::size_t>(nd)] : to_old[static_cast<std::size_t>(nh)];
  }
  const int entry_head = sub[static_cast<std::size_t>(c)];
  const int entered = enter_at[static_cast<std::size_t>(entry_head)];
  result[static_cast<std::size_t>(entered)] = to_old[static_cast<std::size_t>(entry_head)];
  return result;
}

Matrix to_matrix(const ad::Tensor& scores) {
  const std::size_t n = scores.rows();
  Matrix s(n + 1, std::vector<double>(n + 1, kNegInf));
  for (std::size_t d = 1; d <= n; ++d) {
    for (std::size_t h = 0; h <= n; ++h) {
      if (h != d) s[d][h] = scores.at(d - 1, h);
    }
  }
  return s;
}

}  // namespace

std::vector<int> decode_tree_greedy(const ad::Tensor& scores) {
  const std::size_t n = check_arc_shape(scores);
  std::vector<int> heads(n, 0);
  for (std::size_t d = 1; d <= n; ++d) {
    int best = -1;
    for (std::size_t h = 0; h <= n; ++h) {
      if (h == d) continue;
      if (best < 0 || scores.at(d - 1, h) > scores.at(d - 1, static_cast<std::size_t>(best))) {
        best = static_cast<int>(h);
      }
    }
    heads[d - 1] = best;
  }
  return heads;
}

double tree_score(const ad::Tensor& scores, std::span<const int> heads) {
  double total = 0.0;
  for (std::size_t d = 0; d < heads.size(); ++d) {
    total += scores.at(d, static_cast<std::size_t>(heads[d]));
  }
  return total;
}

std::vector<int> decode_tree_mst(const ad::Tensor& scores) {
  if (scores.size() == 0) throw ValidationError("cannot decode an empty sentence");
  const std::size_t n = check_arc_shape(scores);
  for (double v : scores.data()) {
    if (!std::isfinite(v)) throw NumericError("decode_tree_mst needs finite scores");
  }
  const Matrix base = to_matrix(scores);
  auto strip_root = [](const std::vector<int>& full) {
    return std::vector<int>(full.begin() + 1, full.end());
  };
  std::vector<int> best = strip_root(chu_liu_edmonds(base));
  int root_children = 0;
  for (int h : best) root_children += h == 0 ? 1 : 0;
  if (root_children == 1) return best;

  // Enforce a single root child: fix each token in turn as the only one.
  double best_total = kNegInf;
  std::vector<int> best_tree;
  for (std::size_t r = 1; r <= n; ++r) {
    Matrix s = base;
    for (std::size_t d = 1; d <= n; ++d) {
      if (d != r) s[d][0] = kNegInf;
    }
    const std::vector<int> cand = strip_root(chu_liu_edmonds(s));
    const double total = tree_score(scores, cand);
    if (best_tree.empty() || total > best_total) {
      best_total = total;
      best_tree = cand;
    }
  }
  return best_tree;
}

std::vector<int> assign_labels(const ad::Tensor& label_scores, std::span<const int> heads) {
  if (label_scores.rank() != 3 || label_scores.dim(0) != heads.size() ||
      label_scores.dim(1) != heads.size() + 1) {
    throw ShapeError("label scores " + ad::shape_str(label_scores.shape()) + " do not match " +
                     std::to_string(heads.size()) + " heads");
  }
  const std::size_t m = label_scores.dim(1), labels = label_scores.dim(2);
  std::vector<int> out(heads.size(), 0);
  for (std::size_t d = 0; d < heads.size(); ++d) {
    const double* row =
        label_scores.data().data() + (d * m + static_cast<std::size_t>(heads[d])) * labels;
    std::size_t best = 0;
    for (std::size_t l = 1; l < labels; ++l) {
      if (row[l] > row[best]) best = l;
    }
    out[d] = static_cast<int>(best);
  }
  return out;
}

}  // namespace posdep::decode
