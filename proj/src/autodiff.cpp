#include "posdep/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "posdep/error.hpp"

namespace posdep::ad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape_));
  return data_[0];
}

std::span<const double> Tensor::grad() const {
  if (!grad_) return {};
  return *grad_;
}

std::span<double> Tensor::mutable_grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::parameter(Tensor& param) {
  if (auto it = bound_.find(&param); it != bound_.end()) return Var{this, it->second};
  Node node;
  node.value = param;
  node.value.clear_grad();
  node.leaf = &param;
  node.needs_grad = param.requires_grad();
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_.emplace(&param, id);
  return Var{this, id};
}

Var Graph::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (int in : inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw ContractError("operation input refers to a node that does not precede it");
    }
    node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("loss belongs to a different graph");
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
  }
  for (auto& node : nodes_) {
    if (node.needs_grad) {
      node.grad.assign(node.value.size(), 0.0);
    } else {
      node.grad.clear();
    }
  }
  auto& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.needs_grad) root.grad[0] = 1.0;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.needs_grad && node.backward) node.backward(*this, static_cast<int>(i));
  }
  for (auto& node : nodes_) {
    if (!node.leaf || !node.leaf->requires_grad()) continue;
    auto dst = node.leaf->mutable_grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
  }
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw ContractError("unbound variable");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph || !a.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

// Shared implementation for unary elementwise ops; `deriv` maps (x, y) to dy/dx.
template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [xi, deriv](Graph& gr, int self) {
    if (!gr.needs_grad(xi)) return;
    const auto& xs = gr.value(xi);
    const auto& ys = gr.value(self);
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xs[i], ys[i]);
  });
}

enum class Broadcast { none, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.size() == a.shape().back() && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1))) {
    return Broadcast::row;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

void check_nan(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisLayout l{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  gemm(av.data().data(), bv.data().data(), out.data().data(), m, k, n, false, false, false);
  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi, m, k, n](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    if (gr.needs_grad(ai)) {
      gemm(gy.data(), gr.value(bi).data().data(), gr.grad_buffer(ai).data(), m, n, k, false, true,
           true);
    }
    if (gr.needs_grad(bi)) {
      gemm(gr.value(ai).data().data(), gy.data(), gr.grad_buffer(bi).data(), k, m, n, true, false,
           true);
    }
  });
}

namespace {

template <typename Combine, typename DA, typename DB>
Var binary(Var a, Var b, const char* op, Combine combine, DA da, DB db) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op);
  const std::size_t width = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const std::size_t j = kind == Broadcast::none ? i : i % width;
    out[i] = combine(av[i], bv[j]);
  }
  const int ai = a.id, bi = b.id;
  return g.record(std::move(out), {ai, bi}, [ai, bi, kind, width, da, db](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    const auto& as = gr.value(ai);
    const auto& bs = gr.value(bi);
    const bool need_a = gr.needs_grad(ai), need_b = gr.needs_grad(bi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const std::size_t j = kind == Broadcast::none ? i : i % width;
      if (need_a) gr.grad_buffer(ai)[i] += gy[i] * da(as[i], bs[j]);
      if (need_b) gr.grad_buffer(bi)[j] += gy[i] * db(as[i], bs[j]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scalar_mul(Var x, double c) {
  return unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var scale(Var x, Var s) {
  Graph& g = graph_of(x, s);
  if (s.size() != 1) throw ShapeError("scale expects a one-element factor");
  const Tensor& xv = x.value();
  const double c = s.item();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  const int xi = x.id, si = s.id;
  return g.record(std::move(out), {xi, si}, [xi, si](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    const auto& xs = gr.value(xi);
    const double cs = gr.value(si)[0];
    if (gr.needs_grad(xi)) {
      auto& gx = gr.grad_buffer(xi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += cs * gy[i];
    }
    if (gr.needs_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += xs[i] * gy[i];
      gr.grad_buffer(si)[0] += acc;
    }
  });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int xi = x.id;
  return g.record(Tensor::scalar(s), {xi}, [xi](Graph& gr, int self) {
    const double gy = gr.grad_buffer(self)[0];
    for (auto& v : gr.grad_buffer(xi)) v += gy;
  });
}

Var mean(Var x) { return scalar_mul(sum(x), 1.0 / static_cast<double>(x.size())); }

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat needs at least one part");
  Graph& g = graph_of(parts.front());
  const Shape& first = parts.front().shape();
  const std::size_t lead = parts.front().size() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    graph_of(parts.front(), p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw ShapeError("concat: incompatible leading dims " + shape_str(first) + " and " +
                       shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor out(out_shape);
  std::vector<int> ids;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < lead; ++r) {
      std::copy_n(v.data().data() + r * widths[k], widths[k],
                  out.data().data() + r * total + offset);
    }
    offset += widths[k];
    ids.push_back(parts[k].id);
  }
  return g.record(std::move(out), ids, [ids, widths, lead, total](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.needs_grad(ids[k])) {
        auto& gx = gr.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < lead; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gx[r * widths[k] + c] += gy[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
  Graph& g = graph_of(parts.front());
  const Shape& first = parts.front().shape();
  std::size_t rows = 0;
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    graph_of(parts.front(), p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw ShapeError("concat_rows: incompatible trailing dims " + shape_str(first) + " and " +
                       shape_str(s));
    }
    rows += s[0];
    ids.push_back(p.id);
    sizes.push_back(p.size());
  }
  Shape out_shape = first;
  out_shape[0] = rows;
  Tensor out(out_shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
    off += p.size();
  }
  return g.record(std::move(out), ids, [ids, sizes](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.needs_grad(ids[k])) {
        auto& gx = gr.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[o + i];
      }
      o += sizes[k];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.dim(0)) {
    throw IndexError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t stride = xv.size() / xv.dim(0);
  Shape shape = xv.shape();
  shape[0] = end - begin;
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           xv.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  const int xi = x.id;
  const std::size_t off = begin * stride;
  return g.record(Tensor(shape, std::move(data)), {xi}, [xi, off](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (begin >= end || end > cols) {
    throw IndexError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(xv.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data().data() + r * cols + begin, w, out.data().data() + r * w);
  }
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [xi, rows, cols, begin, w](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += gy[r * w + c];
    }
  });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding_lookup");
  if (ids.empty()) throw ShapeError("embedding_lookup needs at least one id");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw IndexError("embedding id " + std::to_string(ids[r]) + " out of range [0, " +
                       std::to_string(tv.rows()) + ")");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data().data() + r * d);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  const int ti = table.id;
  return g.record(std::move(out), {ti}, [ti, rows, d](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    auto& gt = gr.grad_buffer(ti);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(rows[r]) * d;
      for (std::size_t c = 0; c < d; ++c) gt[base + c] += gy[r * d + c];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.value().data().begin(), x.value().data().end()));
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [xi](Graph& gr, int self) {
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var softmax(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  check_nan(xv, "softmax");
  const AxisLayout l = axis_layout(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, xv[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) {
        const double e = std::exp(xv[base + k * l.inner] - mx);
        out[base + k * l.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] /= z;
    }
  }
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [xi, l](Graph& gr, int self) {
    const auto& y = gr.value(self);
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) dot += gy[base + k * l.inner] * y[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = base + k * l.inner;
          gx[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  check_nan(xv, "log_softmax");
  const AxisLayout l = axis_layout(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, xv[base + k * l.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) z += std::exp(xv[base + k * l.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] = xv[base + k * l.inner] - lse;
    }
  }
  const int xi = x.id;
  return g.record(std::move(out), {xi}, [xi, l](Graph& gr, int self) {
    const auto& y = gr.value(self);
    const auto& gy = gr.grad_buffer(self);
    auto& gx = gr.grad_buffer(xi);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double total = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) total += gy[base + k * l.inner];
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = base + k * l.inner;
          gx[idx] += gy[idx] - std::exp(y[idx]) * total;
        }
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> gold) {
  Graph& g = graph_of(logits);
  const Tensor& xv = logits.value();
  require_matrix(xv, "cross_entropy");
  check_nan(xv, "cross_entropy");
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gold.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(gold.size()) + " gold labels for " +
                     std::to_string(n) + " rows");
  }
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= c) {
      throw IndexError("cross_entropy: gold index " + std::to_string(gold[i]) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
    const double* row = xv.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < c; ++k) probs[i * c + k] = std::exp(row[k] - mx) / z;
    loss -= row[gold[i]] - mx - std::log(z);
  }
  loss /= static_cast<double>(n);
  std::vector<int> targets(gold.begin(), gold.end());
  const int xi = logits.id;
  return g.record(Tensor::scalar(loss), {xi},
                  [xi, probs = std::move(probs), targets, n, c](Graph& gr, int self) {
                    const double gy = gr.grad_buffer(self)[0] / static_cast<double>(n);
                    auto& gx = gr.grad_buffer(xi);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t k = 0; k < c; ++k) {
                        const double onehot = static_cast<int>(k) == targets[i] ? 1.0 : 0.0;
                        gx[i * c + k] += gy * (probs[i * c + k] - onehot);
                      }
                    }
                  });
}

Var biaffine(Var dep, Var weight, Var head) {
  Graph& g = graph_of(dep, weight);
  graph_of(dep, head);
  const Tensor& dv = dep.value();
  const Tensor& wv = weight.value();
  const Tensor& hv = head.value();
  require_matrix(dv, "biaffine");
  require_matrix(hv, "biaffine");
  if (wv.rank() != 3 || wv.dim(1) != dv.cols() + 1 || wv.dim(2) != hv.cols()) {
    throw ShapeError("biaffine: weight " + shape_str(wv.shape()) + " incompatible with dep " +
                     shape_str(dv.shape()) + " and head " + shape_str(hv.shape()));
  }
  const std::size_t n = dv.rows(), a = dv.cols() + 1, m = hv.rows(), b = hv.cols(),
                    labels = wv.dim(0);
  // dep augmented with the bias coordinate
  std::vector<double> aug(n * a);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(dv.data().data() + i * (a - 1), a - 1, aug.data() + i * a);
    aug[i * a + a - 1] = 1.0;
  }
  Tensor out({n, m, labels});
  std::vector<double> tmp(n * b), scores(n * m);
  for (std::size_t l = 0; l < labels; ++l) {
    gemm(aug.data(), wv.data().data() + l * a * b, tmp.data(), n, a, b, false, false, false);
    gemm(tmp.data(), hv.data().data(), scores.data(), n, b, m, false, true, false);
    for (std::size_t k = 0; k < n * m; ++k) out[k * labels + l] = scores[k];
  }
  const int di = dep.id, wi = weight.id, hi = head.id;
  return g.record(
      std::move(out), {di, wi, hi},
      [di, wi, hi, aug = std::move(aug), n, a, m, b, labels](Graph& gr, int self) {
        const auto& gy = gr.grad_buffer(self);
        const auto& w = gr.value(wi);
        const auto& h = gr.value(hi);
        std::vector<double> gl(n * m), tmp(n * b), dtmp(n * b), daug(n * a, 0.0);
        const bool need_d = gr.needs_grad(di), need_w = gr.needs_grad(wi),
                   need_h = gr.needs_grad(hi);
        for (std::size_t l = 0; l < labels; ++l) {
          for (std::size_t k = 0; k < n * m; ++k) gl[k] = gy[k * labels + l];
          const double* wl = w.data().data() + l * a * b;
          // d tmp = G_l * H
          gemm(gl.data(), h.data().data(), dtmp.data(), n, m, b, false, false, false);
          if (need_h) {
            gemm(aug.data(), wl, tmp.data(), n, a, b, false, false, false);
            gemm(gl.data(), tmp.data(), gr.grad_buffer(hi).data(), m, n, b, true, false, true);
          }
          if (need_w) {
            gemm(aug.data(), dtmp.data(), gr.grad_buffer(wi).data() + l * a * b, a, n, b, true,
                 false, true);
          }
          if (need_d) gemm(dtmp.data(), wl, daug.data(), n, b, a, false, true, true);
        }
        if (need_d) {
          auto& gd = gr.grad_buffer(di);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p + 1 < a; ++p) gd[i * (a - 1) + p] += daug[i * a + p];
          }
        }
      });
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor mask(shape, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& v : mask.data()) v = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

}  // namespace posdep::ad
