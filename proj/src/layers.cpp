#include "posdep/layers.hpp"

#include <algorithm>
#include <cmath>

#include "posdep/error.hpp"

namespace posdep::nn {

Tensor& ParameterStore::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor t(std::move(shape), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::uniform:
      for (auto& v : t.data()) v = rng.uniform(-kInitScale, kInitScale);
      break;
    case Init::orthogonal:
      init_orthogonal(t, rng);
      break;
  }
  t.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

Tensor& ParameterStore::add_fixed(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(false);
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(value));
  return params_.back().second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

std::vector<ParameterStore::Entry> ParameterStore::entries() {
  std::vector<Entry> out;
  for (auto& [name, t] : params_) out.push_back({name, &t});
  return out;
}

std::vector<ParameterStore::Entry> ParameterStore::trainable() {
  std::vector<Entry> out;
  for (auto& [name, t] : params_) {
    if (t.requires_grad()) out.push_back({name, &t});
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

// Gram-Schmidt on the columns of a Gaussian [rows x cols] block (cols <= rows),
// or on its rows when the block is wide.
void orthogonal_block(double* dst, std::size_t stride, std::size_t rows, std::size_t cols,
                      Rng& rng) {
  const bool tall = rows >= cols;
  const std::size_t vecs = tall ? cols : rows;
  const std::size_t len = tall ? rows : cols;
  std::vector<std::vector<double>> basis;
  while (basis.size() < vecs) {
    std::vector<double> v(len);
    for (auto& x : v) x = rng.normal();
    for (const auto& q : basis) {
      double d = 0.0;
      for (std::size_t i = 0; i < len; ++i) d += v[i] * q[i];
      for (std::size_t i = 0; i < len; ++i) v[i] -= d * q[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      dst[r * stride + c] = tall ? basis[c][r] : basis[r][c];
    }
  }
}

}  // namespace

void init_orthogonal(Tensor& t, Rng& rng) {
  if (t.rank() != 2) throw ShapeError("orthogonal init needs a matrix");
  const std::size_t rows = t.rows(), cols = t.cols();
  if (cols % rows == 0) {
    for (std::size_t b = 0; b < cols / rows; ++b) {
      orthogonal_block(t.data().data() + b * rows, cols, rows, rows, rng);
    }
  } else {
    orthogonal_block(t.data().data(), cols, rows, cols, rng);
  }
}

Embedding::Embedding(ParameterStore& store, const std::string& name, std::size_t count,
                     std::size_t dim, Rng& rng, Init init)
    : table_(&store.add(name, {count, dim}, init, rng)) {}

Var Embedding::lookup(Graph& g, std::span<const int> ids) const {
  return ad::embedding_lookup(g.parameter(*table_), ids);
}

WordEmbedding::WordEmbedding(ParameterStore& store, const std::string& name,
                             Tensor pretrained_aligned) {
  if (pretrained_aligned.rank() != 2) throw ShapeError("pretrained table must be a matrix");
  const Shape shape = pretrained_aligned.shape();
  pretrained_ = &store.add_fixed(name + ".pretrained", std::move(pretrained_aligned));
  Rng unused(0);
  trainable_ = &store.add(name + ".trainable", shape, Init::zeros, unused);
}

Var WordEmbedding::embed(Graph& g, std::span<const int> word_ids) const {
  const Var fixed = ad::embedding_lookup(g.parameter(*pretrained_), word_ids);
  const Var learned = ad::embedding_lookup(g.parameter(*trainable_), word_ids);
  return ad::add(fixed, learned);
}

Lstm::Lstm(ParameterStore& store, const std::string& name, std::size_t input_dim,
           std::size_t hidden_dim, Rng& rng)
    : input_dim_(input_dim),
      hidden_dim_(hidden_dim),
      wx_(&store.add(name + ".Wx", {input_dim, 4 * hidden_dim}, Init::uniform, rng)),
      wh_(&store.add(name + ".Wh", {hidden_dim, 4 * hidden_dim}, Init::orthogonal, rng)),
      b_(&store.add(name + ".b", {1, 4 * hidden_dim}, Init::zeros, rng)) {}

Var Lstm::run(Graph& g, Var inputs, bool reverse, const Tensor* input_mask,
              const Tensor* hidden_mask, DropoutTrace::Pass* trace) const {
  const auto& shape = inputs.shape();
  if (shape.size() != 2 || shape[1] != input_dim_) {
    throw ShapeError("lstm expects [n x " + std::to_string(input_dim_) + "] input, got " +
                     ad::shape_str(shape));
  }
  const std::size_t n = shape[0], h = hidden_dim_;
  Var x = inputs;
  if (input_mask) {
    const Var m = g.constant(*input_mask);
    x = ad::mul(x, m);
  }
  const Var projected = ad::add(ad::matmul(x, g.parameter(*wx_)), g.parameter(*b_));
  const Var wh = g.parameter(*wh_);
  std::optional<Var> hmask;
  if (hidden_mask) hmask = g.constant(*hidden_mask);

  std::vector<Var> outputs(n);
  std::optional<Var> hprev, cprev;
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    if (trace && input_mask) {
      trace->input_masks.emplace_back(input_mask->data().begin(), input_mask->data().end());
    }
    Var gates = ad::slice_rows(projected, t, t + 1);
    if (hprev) {
      Var hin = *hprev;
      if (hmask) {
        hin = ad::mul(hin, *hmask);
        if (trace) {
          trace->hidden_masks.emplace_back(hidden_mask->data().begin(), hidden_mask->data().end());
        }
      }
      gates = ad::add(gates, ad::matmul(hin, wh));
    }
    const Var i = ad::sigmoid(ad::slice_cols(gates, 0, h));
    const Var f = ad::sigmoid(ad::slice_cols(gates, h, 2 * h));
    const Var cand = ad::tanh(ad::slice_cols(gates, 2 * h, 3 * h));
    const Var o = ad::sigmoid(ad::slice_cols(gates, 3 * h, 4 * h));
    Var c = ad::mul(i, cand);
    if (cprev) c = ad::add(c, ad::mul(f, *cprev));
    const Var hcur = ad::mul(o, ad::tanh(c));
    outputs[t] = hcur;
    hprev = hcur;
    cprev = c;
  }
  return ad::concat_rows(outputs);
}

CharEncoder::CharEncoder(ParameterStore& store, const std::string& name, std::size_t char_count,
                         std::size_t char_dim, std::size_t output_dim, Rng& rng) {
  if (output_dim % 2 != 0) throw ConfigError("char encoder output dim must be even");
  table_ = Embedding(store, name + ".table", char_count, char_dim, rng);
  forward_ = Lstm(store, name + ".fwd", char_dim, output_dim / 2, rng);
  backward_ = Lstm(store, name + ".bwd", char_dim, output_dim / 2, rng);
}

Var CharEncoder::encode(Graph& g, std::span<const int> chars) const {
  if (chars.empty()) throw ValidationError("cannot encode a word with no characters");
  const Var embedded = table_.lookup(g, chars);
  const std::size_t n = chars.size();
  const Var fwd = forward_.run(g, embedded, false);
  const Var bwd = backward_.run(g, embedded, true);
  return ad::concat({ad::slice_rows(fwd, n - 1, n), ad::slice_rows(bwd, 0, 1)});
}

BiLstmStack::BiLstmStack(ParameterStore& store, const std::string& name, std::size_t input_dim,
                         std::size_t hidden_dim, std::size_t layers, double input_dropout,
                         double hidden_dropout, Rng& rng)
    : hidden_dim_(hidden_dim), input_dropout_(input_dropout), hidden_dropout_(hidden_dropout) {
  if (layers == 0) throw ConfigError("BiLSTM needs at least one layer");
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string prefix = name + ".l" + std::to_string(l);
    forward_.emplace_back(store, prefix + ".fwd", in, hidden_dim, rng);
    backward_.emplace_back(store, prefix + ".bwd", in, hidden_dim, rng);
    in = 2 * hidden_dim;
  }
}

Var BiLstmStack::run(Graph& g, Var inputs, bool train, Rng& rng, DropoutTrace* trace) const {
  Var x = inputs;
  for (std::size_t l = 0; l < forward_.size(); ++l) {
    std::vector<Var> directions;
    for (int dir = 0; dir < 2; ++dir) {
      const Lstm& lstm = dir == 0 ? forward_[l] : backward_[l];
      std::optional<Tensor> in_mask, h_mask;
      if (train && input_dropout_ > 0.0) {
        in_mask = ad::dropout_mask({1, lstm.input_dim()}, input_dropout_, rng);
      }
      if (train && hidden_dropout_ > 0.0) {
        h_mask = ad::dropout_mask({1, hidden_dim_}, hidden_dropout_, rng);
      }
      DropoutTrace::Pass* pass = nullptr;
      if (trace) {
        trace->passes.push_back({l, dir == 1, {}, {}});
        pass = &trace->passes.back();
      }
      directions.push_back(lstm.run(g, x, dir == 1, in_mask ? &*in_mask : nullptr,
                                    h_mask ? &*h_mask : nullptr, pass));
    }
    x = ad::concat(directions);
  }
  return x;
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::size_t input_dim,
         std::vector<MlpLayerSpec> layers, Rng& rng)
    : specs_(std::move(layers)) {
  if (specs_.empty()) throw ConfigError("MLP needs at least one layer");
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    const std::string prefix = name + "." + std::to_string(l);
    weights_.push_back(&store.add(prefix + ".W", {in, specs_[l].out_dim}, Init::uniform, rng));
    biases_.push_back(&store.add(prefix + ".b", {1, specs_[l].out_dim}, Init::zeros, rng));
    in = specs_[l].out_dim;
  }
}

Var Mlp::forward(Graph& g, Var x, bool train, double dropout, Rng* rng) const {
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    x = ad::add(ad::matmul(x, g.parameter(*weights_[l])), g.parameter(*biases_[l]));
    if (specs_[l].activation == Activation::leaky_relu) x = ad::leaky_relu(x);
    if (train && dropout > 0.0 && rng && specs_[l].activation != Activation::linear) {
      x = ad::mul(x, g.constant(ad::dropout_mask(x.shape(), dropout, *rng)));
    }
  }
  return x;
}

BiaffineScorer::BiaffineScorer(ParameterStore& store, const std::string& name,
                               std::size_t dep_dim, std::size_t head_dim, std::size_t outputs,
                               Rng& rng)
    : weight_(&store.add(name + ".W", {outputs, dep_dim + 1, head_dim}, Init::uniform, rng)) {}

Var BiaffineScorer::scores(Graph& g, Var dep, Var head) const {
  return ad::biaffine(dep, g.parameter(*weight_), head);
}

Var BiaffineScorer::arc_scores(Graph& g, Var dep, Var head) const {
  if (weight_->dim(0) != 1) throw ConfigError("arc scoring needs a single-output biaffine");
  const Var s = scores(g, dep, head);
  return ad::reshape(s, {s.shape()[0], s.shape()[1]});
}

LayerAttention::LayerAttention(ParameterStore& store, const std::string& name,
                               std::size_t layer_count, double layer_dropout)
    : layer_dropout_(layer_dropout) {
  if (!(layer_dropout >= 0.0 && layer_dropout < 1.0)) {
    throw ParameterError("layer dropout must lie in [0, 1)");
  }
  Rng unused(0);
  gamma_ = &store.add(name + ".gamma", {1}, Init::zeros, unused);
  (*gamma_)[0] = 1.0;
  scores_ = &store.add(name + ".s", {layer_count, 1}, Init::zeros, unused);
}

std::vector<int> LayerAttention::sample_survivors(bool train, Rng& rng) const {
  const int count = static_cast<int>(layer_count());
  std::vector<int> all(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) all[static_cast<std::size_t>(j)] = j;
  if (!train || layer_dropout_ == 0.0) return all;
  for (int attempt = 0; attempt < kRetryBudget; ++attempt) {
    std::vector<int> kept;
    for (int j = 0; j < count; ++j) {
      if (!rng.bernoulli(layer_dropout_)) kept.push_back(j);
    }
    if (!kept.empty()) return kept;
  }
  return all;
}

std::vector<double> LayerAttention::mixture_weights(std::span<const int> survivors) const {
  std::vector<double> w(layer_count(), 0.0);
  double mx = -INFINITY;
  for (int j : survivors) mx = std::max(mx, (*scores_)[static_cast<std::size_t>(j)]);
  double z = 0.0;
  for (int j : survivors) z += std::exp((*scores_)[static_cast<std::size_t>(j)] - mx);
  for (int j : survivors) {
    w[static_cast<std::size_t>(j)] = std::exp((*scores_)[static_cast<std::size_t>(j)] - mx) / z;
  }
  return w;
}

Var LayerAttention::forward(Graph& g, const Tensor& layers, bool train, Rng& rng) const {
  if (layers.rank() != 3 || layers.dim(0) != layer_count()) {
    throw ShapeError("layer attention expects [" + std::to_string(layer_count()) +
                     " x n x d] layers, got " + ad::shape_str(layers.shape()));
  }
  const std::size_t n = layers.dim(1), d = layers.dim(2), stride = n * d;
  const std::vector<int> kept = sample_survivors(train, rng);
  Tensor picked({kept.size(), stride});
  for (std::size_t k = 0; k < kept.size(); ++k) {
    std::copy_n(layers.data().data() + static_cast<std::size_t>(kept[k]) * stride, stride,
                picked.data().data() + k * stride);
  }
  const Var s = ad::embedding_lookup(g.parameter(*scores_), kept);
  const Var weights = ad::softmax(ad::reshape(s, {1, kept.size()}), 1);
  const Var mixed = ad::matmul(weights, g.constant(std::move(picked)));
  return ad::scale(ad::reshape(mixed, {n, d}), g.parameter(*gamma_));
}

std::vector<int> token_dropout(std::span<const int> ids, double rate, int mask_id, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("token dropout rate must lie in [0, 1)");
  std::vector<int> out(ids.begin(), ids.end());
  if (rate == 0.0) return out;
  for (auto& id : out) {
    if (rng.uniform() < rate) id = mask_id;
  }
  return out;
}

}  // namespace posdep::nn
