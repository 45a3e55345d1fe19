#pragma once

// Independent reference computations used by the tests.

#include <functional>
#include <optional>
#include <vector>

#include "posdep/autodiff.hpp"
#include "posdep/rng.hpp"

namespace posdep::testing {

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-2);

// Builds a scalar loss from graph leaves bound to `inputs`.
using LossBuilder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct GradCheck {
  double max_error = 0.0;
  std::size_t probes = 0;
};

// Compares backward() against central differences for every coordinate of
// every input.
GradCheck check_gradients(const LossBuilder& build, std::vector<ad::Tensor> inputs, double h = 1e-5);

// Loss value as a plain function of the current tensor values.
double central_difference(const std::function<double()>& loss, double& x, double h = 1e-5);

// Exhaustive search over head assignments; score m[dep-1][head]. Returns the
// best total over single-rooted arborescences and one maximizer.
struct BruteForceTree {
  double total;
  std::vector<int> heads;
};
BruteForceTree brute_force_mst(const ad::Tensor& scores);

// Reachability-based check: every token reaches 0, exactly one child of 0.
bool valid_tree(const std::vector<int>& heads);

double tree_total(const ad::Tensor& scores, const std::vector<int>& heads);

ad::Tensor random_tensor(const ad::Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0);

}  // namespace posdep::testing
