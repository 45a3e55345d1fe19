#include "posdep/models.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "posdep/error.hpp"

namespace posdep::models {

namespace {

// Token-level dropout of a whole input component: each row is zeroed with
// probability `rate`, surviving rows are rescaled. The pseudo-root row is kept.
Var drop_rows(Graph& g, Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  ad::Tensor mask({rows, cols}, 1.0);
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t r = 1; r < rows; ++r) {
    const double v = rng.uniform() < rate ? 0.0 : keep;
    for (std::size_t c = 0; c < cols; ++c) mask.at(r, c) = v;
  }
  return ad::mul(x, g.constant(std::move(mask)));
}

}  // namespace

Model::Model(ModelSpec spec, corpus::Vocab vocab, ad::Tensor pretrained_aligned)
    : spec_(std::move(spec)), vocab_(std::move(vocab)) {
  spec_.validate();
  build(pretrained_aligned);
}

std::size_t Model::base_input_dim() const {
  return spec_.word_dim + (spec_.use_context_layers ? spec_.context_dim : spec_.char_out);
}

void Model::build(const ad::Tensor& pretrained_aligned) {
  Rng rng = Rng(spec_.seed).split("init");
  const std::size_t words = vocab_.word_count();
  if (spec_.use_context_layers && spec_.context_dim == 0) {
    throw ConfigError("use_context_layers needs context_dim (taken from the context file)");
  }
  if (pretrained_aligned.size() == 0) {
    word_ = nn::WordEmbedding(params_, "embed.word", ad::Tensor({words, spec_.word_dim}, 0.0));
  } else {
    if (pretrained_aligned.shape() != ad::Shape{words, spec_.word_dim}) {
      throw ShapeError("pretrained table " + ad::shape_str(pretrained_aligned.shape()) +
                       " does not match vocabulary [" + std::to_string(words) + "x" +
                       std::to_string(spec_.word_dim) + "]");
    }
    word_ = nn::WordEmbedding(params_, "embed.word", pretrained_aligned);
  }
  if (!spec_.use_context_layers) {
    chars_.emplace(params_, "embed.char", vocab_.char_count(), spec_.char_dim, spec_.char_out, rng);
  }
  std::size_t parse_in = base_input_dim();
  if (spec_.consumes_tags()) {
    if (vocab_.tag_count() == 0) throw ConfigError("pipeline parser needs tagged input");
    tag_embed_.emplace(params_, "embed.tag", vocab_.tag_count() + 2, spec_.tag_dim, rng);
    parse_in += spec_.tag_dim;
    if (spec_.use_hetero) {
      hetero_embed_.emplace(params_, "embed.hetero", vocab_.hetero_count() + 2, spec_.tag_dim, rng);
      parse_in += spec_.tag_dim;
    }
  }

  auto make_tower = [&](const std::string& role, std::size_t input_dim) {
    Tower t{nn::BiLstmStack(params_, "tower." + role, input_dim, spec_.lstm_hidden,
                            spec_.lstm_layers, spec_.lstm_input_dropout,
                            spec_.lstm_hidden_dropout, rng),
            std::nullopt};
    if (spec_.use_context_layers) {
      t.context.emplace(params_, "ctx." + role, spec_.context_layers, spec_.layer_dropout);
    }
    return t;
  };

  const std::size_t tower_out = 2 * spec_.lstm_hidden;
  switch (spec_.framework) {
    case Framework::basic_tagger:
      tag_tower_ = make_tower("tag", base_input_dim());
      break;
    case Framework::basic_parser:
    case Framework::pipeline_parser:
      parse_tower_ = make_tower("parse", parse_in);
      break;
    case Framework::share_loose:
      tag_tower_ = make_tower("tag", base_input_dim());
      parse_tower_ = make_tower("parse", base_input_dim());
      break;
    case Framework::share_tight:
      parse_tower_ = make_tower("shared", base_input_dim());
      break;
    case Framework::stack:
      tag_tower_ = make_tower("tag", base_input_dim());
      parse_tower_ = make_tower("parse", base_input_dim() + tower_out);
      break;
  }

  using nn::Activation;
  if (spec_.has_tagger()) {
    if (vocab_.tag_count() == 0) throw ConfigError("tagging model needs a tagged treebank");
    tag_head_.emplace(params_, "head.tag", tower_out,
                      std::vector<nn::MlpLayerSpec>{{spec_.tag_mlp, Activation::leaky_relu},
                                                    {vocab_.tag_count(), Activation::linear}},
                      rng);
  }
  if (spec_.has_hetero_head()) {
    if (vocab_.hetero_count() == 0) throw ConfigError("use_hetero needs a heterogeneous tag corpus");
    hetero_head_.emplace(params_, "head.hetero", tower_out,
                         std::vector<nn::MlpLayerSpec>{{spec_.tag_mlp, Activation::leaky_relu},
                                                       {vocab_.hetero_count(), Activation::linear}},
                         rng);
  }
  if (spec_.has_parser()) {
    if (vocab_.label_count() == 0) throw ConfigError("parsing model needs dependency labels");
    const std::vector<nn::MlpLayerSpec> arc{{spec_.arc_mlp, Activation::leaky_relu}};
    const std::vector<nn::MlpLayerSpec> lab{{spec_.label_mlp, Activation::leaky_relu}};
    arc_dep_.emplace(params_, "head.arc_dep", tower_out, arc, rng);
    arc_head_.emplace(params_, "head.arc_head", tower_out, arc, rng);
    label_dep_.emplace(params_, "head.label_dep", tower_out, lab, rng);
    label_head_.emplace(params_, "head.label_head", tower_out, lab, rng);
    arc_scorer_.emplace(params_, "head.arc", spec_.arc_mlp, spec_.arc_mlp, 1, rng);
    label_scorer_.emplace(params_, "head.label", spec_.label_mlp, spec_.label_mlp,
                          vocab_.label_count(), rng);
  }
}

Var Model::tower_input(Graph& g, const EncodedSentence& s, const Tower& tower, Var word,
                       std::optional<Var> chars, bool train, Rng& rng) const {
  std::vector<Var> parts{word};
  if (tower.context) {
    if (!s.context) throw ConfigError("model uses context layers but the sentence has none");
    const ad::Tensor& ctx = *s.context;
    const std::size_t n = s.size();
    if (ctx.rank() != 3 || ctx.dim(0) != spec_.context_layers || ctx.dim(1) != n ||
        ctx.dim(2) != spec_.context_dim) {
      throw ShapeError("context layers " + ad::shape_str(ctx.shape()) + " do not match a " +
                       std::to_string(n) + "-token sentence");
    }
    const std::size_t d = spec_.context_dim;
    ad::Tensor padded({spec_.context_layers, n + 1, d}, 0.0);
    for (std::size_t l = 0; l < spec_.context_layers; ++l) {
      std::copy_n(ctx.data().data() + l * n * d, n * d,
                  padded.data().data() + (l * (n + 1) + 1) * d);
    }
    Var bert = tower.context->forward(g, padded, train, rng);
    if (train) bert = drop_rows(g, bert, spec_.embed_dropout, rng);
    parts.push_back(bert);
  } else {
    parts.push_back(*chars);
  }
  if (tag_embed_) {
    Var tags = tag_embed_->lookup(g, s.input_tags);
    if (train) tags = drop_rows(g, tags, spec_.embed_dropout, rng);
    parts.push_back(tags);
    if (hetero_embed_) {
      Var het = hetero_embed_->lookup(g, s.input_hetero);
      if (train) het = drop_rows(g, het, spec_.embed_dropout, rng);
      parts.push_back(het);
    }
  }
  return ad::concat(parts);
}

Outputs Model::forward(Graph& g, const EncodedSentence& s, bool train, Rng& rng,
                       ForwardRequest request) const {
  const std::size_t n = s.size();
  if (n == 0) throw ValidationError("cannot run a model on an empty sentence");
  Outputs out;
  request.tags = request.tags && spec_.has_tagger();
  request.parse = request.parse && spec_.has_parser();

  std::vector<int> words = s.words;
  if (train && spec_.token_dropout > 0.0) {
    const auto dropped = nn::token_dropout(std::span<const int>(words).subspan(1),
                                           spec_.token_dropout, corpus::Vocab::kOov, rng);
    std::copy(dropped.begin(), dropped.end(), words.begin() + 1);
  }
  Var word = word_.embed(g, words);
  if (train) word = drop_rows(g, word, spec_.embed_dropout, rng);
  std::optional<Var> chars;
  if (chars_) {
    std::vector<Var> encoded;
    encoded.reserve(s.chars.size());
    for (const auto& c : s.chars) encoded.push_back(chars_->encode(g, c));
    chars = ad::concat_rows(encoded);
    if (train) chars = drop_rows(g, *chars, spec_.embed_dropout, rng);
  }

  const bool stacked = spec_.framework == Framework::stack;
  std::optional<Var> tag_hidden;
  if (tag_tower_ && (request.tags || (stacked && request.parse))) {
    const Var x = tower_input(g, s, *tag_tower_, word, chars, train, rng);
    tag_hidden = tag_tower_->lstm.run(g, x, train, rng);
    out.tag_tower = tag_hidden;
  }
  std::optional<Var> parse_hidden;
  const bool tight = spec_.framework == Framework::share_tight;
  if (parse_tower_ && (request.parse || (tight && request.tags))) {
    Var x = tower_input(g, s, *parse_tower_, word, chars, train, rng);
    if (stacked) x = ad::concat({x, *tag_hidden});
    parse_hidden = parse_tower_->lstm.run(g, x, train, rng);
  }

  if (request.tags) {
    const Var h = tight ? *parse_hidden : *tag_hidden;
    const Var tokens = ad::slice_rows(h, 1, n + 1);
    out.tag_logits = tag_head_->forward(g, tokens, train, spec_.mlp_dropout, &rng);
    if (hetero_head_) {
      out.hetero_logits = hetero_head_->forward(g, tokens, train, spec_.mlp_dropout, &rng);
    }
  }
  if (request.parse) {
    const Var h = *parse_hidden;
    const Var deps = ad::slice_rows(h, 1, n + 1);
    const Var arc_d = arc_dep_->forward(g, deps, train, spec_.mlp_dropout, &rng);
    const Var arc_h = arc_head_->forward(g, h, train, spec_.mlp_dropout, &rng);
    const Var lab_d = label_dep_->forward(g, deps, train, spec_.mlp_dropout, &rng);
    const Var lab_h = label_head_->forward(g, h, train, spec_.mlp_dropout, &rng);
    out.arc_scores = arc_scorer_->arc_scores(g, arc_d, arc_h);
    out.label_scores = label_scorer_->scores(g, lab_d, lab_h);
  }
  return out;
}

Var arc_loss(Var arc_scores, std::span<const int> gold_heads) {
  return ad::cross_entropy(arc_scores, gold_heads);
}

Var label_loss(Var label_scores, std::span<const int> gold_heads, std::span<const int> gold_labels) {
  const auto& shape = label_scores.shape();
  if (shape.size() != 3 || shape[0] != gold_heads.size() || gold_labels.size() != gold_heads.size()) {
    throw ShapeError("label scores " + ad::shape_str(shape) + " do not match gold annotation");
  }
  const std::size_t n = shape[0], m = shape[1], labels = shape[2];
  std::vector<int> cells(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (gold_heads[i] < 0 || static_cast<std::size_t>(gold_heads[i]) >= m) {
      throw IndexError("gold head " + std::to_string(gold_heads[i]) + " out of range");
    }
    cells[i] = static_cast<int>(i * m + static_cast<std::size_t>(gold_heads[i]));
  }
  const Var flat = ad::reshape(label_scores, {n * m, labels});
  return ad::cross_entropy(ad::embedding_lookup(flat, cells), gold_labels);
}

LossBreakdown Model::loss_terms(Graph& g, std::span<const EncodedSentence* const> batch,
                                bool train, Rng& rng, bool dep, bool pos, bool hetero) const {
  std::vector<Var> dep_sum, pos_sum, het_sum;
  LossBreakdown out;
  for (const EncodedSentence* s : batch) {
    ForwardRequest req;
    const bool want_pos = pos && spec_.has_tagger() && s->has_tags;
    const bool want_het = hetero && hetero_head_.has_value() && s->has_hetero;
    req.tags = want_pos || want_het;
    req.parse = dep && spec_.has_parser() && s->has_tree;
    if (!req.tags && !req.parse) continue;
    const Outputs o = forward(g, *s, train, rng, req);
    const double n = static_cast<double>(s->size());
    if (req.parse) {
      dep_sum.push_back(ad::scalar_mul(arc_loss(*o.arc_scores, s->heads), n));
      dep_sum.push_back(ad::scalar_mul(label_loss(*o.label_scores, s->heads, s->labels), n));
      out.dep_tokens += s->size();
    }
    if (want_pos) {
      pos_sum.push_back(ad::scalar_mul(ad::cross_entropy(*o.tag_logits, s->tags), n));
      out.pos_tokens += s->size();
    }
    if (want_het) {
      het_sum.push_back(ad::scalar_mul(ad::cross_entropy(*o.hetero_logits, s->hetero_tags), n));
      out.hetero_tokens += s->size();
    }
  }
  std::vector<Var> terms;
  auto finish = [&](const std::vector<Var>& parts, std::size_t tokens, double& value) {
    if (parts.empty()) return;
    Var total = ad::concat(parts);
    total = ad::scalar_mul(ad::sum(total), 1.0 / static_cast<double>(tokens));
    value = total.item();
    terms.push_back(total);
  };
  finish(dep_sum, out.dep_tokens, out.dep);
  finish(pos_sum, out.pos_tokens, out.pos);
  finish(het_sum, out.hetero_tokens, out.pos_hetero);
  if (terms.empty()) {
    out.total = g.constant(ad::Tensor::scalar(0.0));
  } else {
    out.total = terms.size() == 1 ? terms[0] : ad::sum(ad::concat(terms));
  }
  return out;
}

LossBreakdown Model::joint_loss(Graph& g, std::span<const EncodedSentence* const> batch, bool train,
                                Rng& rng) const {
  return loss_terms(g, batch, train, rng, true, true, true);
}

double Model::loss_term(std::span<const EncodedSentence* const> batch, LossTerm term) const {
  Graph g;
  Rng rng(0);
  const LossBreakdown b = loss_terms(g, batch, false, rng, term == LossTerm::dep,
                                     term == LossTerm::pos, term == LossTerm::pos_hetero);
  return b.total.item();
}

decode::ParseResult Model::predict(const EncodedSentence& s, decode::TreeDecoder decoder) const {
  Graph g;
  Rng rng(0);
  const Outputs o = forward(g, s, false, rng);
  decode::ParseResult r;
  if (o.tag_logits) r.tags = decode::decode_tags(o.tag_logits->value());
  if (o.hetero_logits) r.hetero_tags = decode::decode_tags(o.hetero_logits->value());
  if (o.arc_scores) {
    r.arc_scores = o.arc_scores->value();
    r.heads = decoder == decode::TreeDecoder::mst ? decode::decode_tree_mst(r.arc_scores)
                                                  : decode::decode_tree_greedy(r.arc_scores);
    r.labels = decode::assign_labels(o.label_scores->value(), r.heads);
  }
  return r;
}

void Model::apply_prediction(corpus::Sentence& s, const decode::ParseResult& r) const {
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    auto& t = s.tokens[i];
    if (!r.tags.empty()) t.pred_tag = vocab_.tag(r.tags[i]);
    if (r.hetero_tags) t.pred_hetero = vocab_.hetero_tag((*r.hetero_tags)[i]);
    if (!r.heads.empty()) {
      t.pred_head = r.heads[i];
      t.pred_label = vocab_.label(r.labels[i]);
    }
  }
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian hosts");

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ValidationError("'" + path + "': truncated checkpoint");
  }
  return v;
}

std::string take_string(std::istream& in, const std::string& path) {
  const auto n = take<std::uint64_t>(in, path);
  if (n > (std::uint64_t{1} << 34)) throw ValidationError("'" + path + "': corrupt string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ValidationError("'" + path + "': truncated checkpoint");
  }
  return s;
}

struct Blob {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct Contents {
  ModelSpec spec;
  corpus::Vocab vocab;
  std::vector<Blob> blobs;
};

Contents read_contents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PDCK", 4) != 0) {
    throw ValidationError("'" + path + "' is not a checkpoint");
  }
  if (take<std::uint32_t>(in, path) != kCheckpointVersion) {
    throw ValidationError("'" + path + "': unsupported checkpoint version");
  }
  Contents c;
  c.spec = ModelSpec::from_text(take_string(in, path));
  c.vocab = corpus::Vocab::deserialize(take_string(in, path));
  const auto count = take<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name = take_string(in, path);
    const auto rank = take<std::uint32_t>(in, path);
    if (rank == 0 || rank > 8) throw ValidationError("'" + path + "': corrupt tensor rank");
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(take<std::uint64_t>(in, path));
    b.values.resize(ad::shape_size(b.shape));
    if (!in.read(reinterpret_cast<char*>(b.values.data()),
                 static_cast<std::streamsize>(b.values.size() * sizeof(double)))) {
      throw ValidationError("'" + path + "': truncated tensor '" + b.name + "'");
    }
    c.blobs.push_back(std::move(b));
  }
  return c;
}

void assign(Model& model, std::vector<Blob>& blobs, const std::string& path) {
  auto entries = model.params().entries();
  if (entries.size() != blobs.size()) {
    throw ValidationError("'" + path + "': checkpoint has " + std::to_string(blobs.size()) +
                          " tensors, model expects " + std::to_string(entries.size()));
  }
  for (auto& b : blobs) {
    if (!model.params().contains(b.name)) {
      throw ValidationError("'" + path + "': unexpected tensor '" + b.name + "'");
    }
    ad::Tensor& t = model.params().get(b.name);
    if (t.shape() != b.shape) {
      throw ValidationError("'" + path + "': tensor '" + b.name + "' has shape " +
                            ad::shape_str(b.shape) + ", model expects " + ad::shape_str(t.shape()));
    }
    t.storage() = std::move(b.values);
  }
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write("PDCK", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, model.spec().to_text());
  put_string(out, model.vocab().serialize());
  auto entries = model.params().entries();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_string(out, e.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor->rank()));
    for (auto d : e.tensor->shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.tensor->data().data()),
              static_cast<std::streamsize>(e.tensor->size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  Contents c = read_contents(path);
  auto model = std::make_unique<Model>(c.spec, c.vocab);
  assign(*model, c.blobs, path);
  return model;
}

void load_parameters(Model& model, const std::string& path) {
  Contents c = read_contents(path);
  if (!(c.spec == model.spec())) {
    throw ValidationError("'" + path + "': checkpoint settings differ from the model's");
  }
  if (!(c.vocab == model.vocab())) {
    throw ValidationError("'" + path + "': checkpoint vocabulary differs from the model's");
  }
  assign(model, c.blobs, path);
}

}  // namespace posdep::models
