#pragma once

// Dense-tensor reverse-mode automatic differentiation.
//
// A Graph is a tape: every operation appends a node holding its output value,
// the ids of its inputs and a closure that pushes the output gradient back to
// the inputs. backward() replays the tape in reverse insertion order, which is
// a valid reverse topological order because inputs always precede outputs.
//
// Parameters are ordinary Tensors owned outside the graph. Binding one with
// Graph::parameter() creates a leaf whose gradient is added into the
// parameter's own grad buffer at the end of backward(); those buffers keep
// accumulating until zero_grad() is called.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "posdep/rng.hpp"

namespace posdep::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }
  bool has_grad() const { return grad_.has_value(); }
  std::span<const double> grad() const;
  // Returns the grad buffer, creating a zero-filled one when absent.
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  // Same shape and values (gradients ignored).
  bool same_values(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Binding the same parameter twice returns the same leaf.
  Var parameter(Tensor& param);

  // Appends an operation node. Used by the op implementations.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  // Reverse sweep from a scalar loss.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Gradient buffer of a node; valid during and after backward().
  std::vector<double>& grad_buffer(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::span<const double> grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor* leaf = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, int> bound_;
};

// Leaky ReLU slope used throughout the models.
inline constexpr double kLeakySlope = 0.1;

Var matmul(Var a, Var b);
// Elementwise; b may also be a row broadcast over the leading dims of a
// (b.size() == last dim of a).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var x, double c);
// x scaled by a one-element variable.
Var scale(Var x, Var s);
Var sigmoid(Var x);
Var tanh(Var x);
Var leaky_relu(Var x, double slope = kLeakySlope);
Var sum(Var x);
Var mean(Var x);
// Concatenation along the last dimension.
Var concat(const std::vector<Var>& parts);
// Concatenation along the first dimension.
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
// Gather rows of a [V x d] table; backward scatter-adds into the table.
Var embedding_lookup(Var table, std::span<const int> ids);
Var reshape(Var x, Shape shape);
Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);
// Mean negative log-likelihood of the gold classes under row-wise softmax.
Var cross_entropy(Var logits, std::span<const int> gold);
// out[i][j][l] = [dep_i; 1]^T W_l head_j, for dep [n x a], W [L x (a+1) x b],
// head [m x b]; the result has shape [n x m x L].
Var biaffine(Var dep, Var weight, Var head);

// Inverted-dropout mask with entries in {0, 1/(1-rate)}.
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

// Raw kernel: C (+)= op(A) * op(B) with op(X) = X or X^T.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate);

}  // namespace posdep::ad
