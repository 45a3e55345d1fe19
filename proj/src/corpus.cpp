#include "posdep/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "posdep/error.hpp"
#include "posdep/tree.hpp"

namespace posdep::corpus {

Profile parse_profile(std::string_view name) {
  if (name == "conllx") return Profile::conllx;
  if (name == "conll09") return Profile::conll09;
  throw ConfigError("unknown column profile '" + std::string(name) + "' (expected conllx|conll09)");
}

std::string to_string(Profile p) { return p == Profile::conllx ? "conllx" : "conll09"; }

std::vector<int> Sentence::gold_heads() const {
  std::vector<int> heads;
  heads.reserve(tokens.size());
  for (const auto& t : tokens) heads.push_back(t.head.value_or(-1));
  return heads;
}

const std::set<std::string>& default_punct_tags() {
  static const std::set<std::string> tags{"``", "''", ":", ",", "."};
  return tags;
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

// Tab-separated when the line contains a tab, whitespace-separated otherwise.
std::vector<std::string> split_columns(std::string_view line) {
  std::vector<std::string> cols;
  if (line.find('\t') != std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      std::size_t end = line.find('\t', start);
      if (end == std::string_view::npos) {
        cols.emplace_back(line.substr(start));
        break;
      }
      cols.emplace_back(line.substr(start, end - start));
      start = end + 1;
    }
    while (!cols.empty() && cols.back().empty()) cols.pop_back();
  } else {
    std::istringstream ss{std::string(line)};
    std::string c;
    while (ss >> c) cols.push_back(c);
  }
  return cols;
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::string> field(const std::string& s) {
  if (s == "_" || s.empty()) return std::nullopt;
  return s;
}

std::optional<std::string> hetero_feature(const std::string& feats) {
  std::size_t start = 0;
  while (start <= feats.size()) {
    std::size_t end = feats.find('|', start);
    if (end == std::string::npos) end = feats.size();
    const std::string item = feats.substr(start, end - start);
    if (item.rfind("hetero=", 0) == 0 && item.size() > 7) return item.substr(7);
    start = end + 1;
  }
  return std::nullopt;
}

struct Columns {
  std::size_t min_count;
  std::size_t form = 1, lemma = 2, tag, feats, head, label;
  std::optional<std::size_t> pred_tag, pred_feats, pred_head, pred_label;
};

Columns layout(Profile profile) {
  if (profile == Profile::conllx) return {8, 1, 2, 4, 5, 6, 7, {}, {}, {}, {}};
  return {12, 1, 2, 4, 6, 8, 10, 5, 7, 9, 11};
}

void finish_sentence(std::vector<Sentence>& out, Sentence& current, std::size_t first_line,
                     const std::string& origin, const ReadOptions& options) {
  if (current.tokens.empty()) return;
  const std::vector<int> heads = current.gold_heads();
  const int n = static_cast<int>(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i] < 0 || heads[i] > n) {
      throw ValidationError(origin + ": sentence " + std::to_string(out.size() + 1) +
                            " (line " + std::to_string(first_line) + "): head " +
                            std::to_string(heads[i]) + " of token " + std::to_string(i + 1) +
                            " out of range");
    }
  }
  if (auto defect = options.validate_trees ? tree_defect(heads) : std::nullopt) {
    throw ValidationError(origin + ": sentence " + std::to_string(out.size() + 1) + " (line " +
                          std::to_string(first_line) + ") is not a tree: " + *defect);
  }
  for (auto& t : current.tokens) t.is_punct = options.punct_tags.count(t.tag) != 0;
  out.push_back(std::move(current));
  current = Sentence{};
}

}  // namespace

std::vector<Sentence> parse_conll(std::string_view text, Profile profile,
                                  const ReadOptions& options, const std::string& origin) {
  const Columns cols = layout(profile);
  std::vector<Sentence> out;
  Sentence current;
  std::size_t first_line = 0;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string_view line = lines[ln];
    const std::size_t lineno = ln + 1;
    if (is_blank(line)) {
      finish_sentence(out, current, first_line, origin, options);
      continue;
    }
    if (line.front() == '#') continue;
    const auto c = split_columns(line);
    if (c.size() < cols.min_count || (profile == Profile::conllx && c.size() != 8 && c.size() != 10)) {
      throw ParseError(origin + ": expected " +
                           std::string(profile == Profile::conllx ? "8 or 10" : "at least 12") +
                           " columns for " + to_string(profile) + ", found " +
                           std::to_string(c.size()),
                       lineno);
    }
    const auto id = parse_int(c[0]);
    if (!id || *id != static_cast<int>(current.tokens.size()) + 1) {
      throw ParseError(origin + ": token id '" + c[0] + "' out of sequence", lineno);
    }
    if (current.tokens.empty()) first_line = lineno;
    Token tok;
    tok.form = c[cols.form];
    tok.lemma = c[cols.lemma];
    tok.tag = field(c[cols.tag]).value_or("");
    if (profile == Profile::conllx && tok.tag.empty()) tok.tag = field(c[3]).value_or("");
    tok.hetero = hetero_feature(c[cols.feats]);
    const auto head = parse_int(c[cols.head]);
    if (!head) throw ParseError(origin + ": HEAD column '" + c[cols.head] + "' is not an integer", lineno);
    tok.head = *head;
    tok.label = field(c[cols.label]);
    if (!tok.label) throw ParseError(origin + ": missing dependency label", lineno);
    if (cols.pred_tag) {
      tok.pred_tag = field(c[*cols.pred_tag]);
      tok.pred_hetero = hetero_feature(c[*cols.pred_feats]);
      if (auto ph = field(c[*cols.pred_head])) {
        const auto v = parse_int(*ph);
        if (!v) throw ParseError(origin + ": PHEAD column '" + *ph + "' is not an integer", lineno);
        tok.pred_head = *v;
      }
      tok.pred_label = field(c[*cols.pred_label]);
    }
    current.tokens.push_back(std::move(tok));
  }
  finish_sentence(out, current, first_line, origin, options);
  return out;
}

std::vector<Sentence> read_conll(const std::string& path, Profile profile,
                                 const ReadOptions& options) {
  return parse_conll(read_file(path), profile, options, path);
}

std::vector<Sentence> parse_tag_corpus(std::string_view text, const std::string& origin) {
  std::vector<Sentence> out;
  Sentence current;
  current.source = Source::hetero_tags;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (is_blank(lines[ln])) {
      if (!current.tokens.empty()) {
        out.push_back(std::move(current));
        current = Sentence{};
        current.source = Source::hetero_tags;
      }
      continue;
    }
    const auto c = split_columns(lines[ln]);
    if (c.size() != 2) {
      throw ParseError(origin + ": expected 2 columns (form tag), found " + std::to_string(c.size()),
                       ln + 1);
    }
    Token tok;
    tok.form = c[0];
    tok.hetero = c[1];
    current.tokens.push_back(std::move(tok));
  }
  if (!current.tokens.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<Sentence> read_tag_corpus(const std::string& path) {
  return parse_tag_corpus(read_file(path), path);
}

std::string format_conll(std::span<const Sentence> sentences, Profile profile) {
  std::ostringstream os;
  auto or_blank = [](const std::optional<std::string>& s) { return s ? *s : std::string("_"); };
  auto nonempty = [](const std::string& s) { return s.empty() ? std::string("_") : s; };
  auto feats = [](const std::optional<std::string>& h) {
    return h ? "hetero=" + *h : std::string("_");
  };
  auto head_str = [](const std::optional<int>& h) { return h ? std::to_string(*h) : std::string("_"); };
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const Token& t = s.tokens[i];
      const std::string pred_tag = t.pred_tag ? *t.pred_tag : t.tag;
      const auto pred_hetero = t.pred_hetero ? t.pred_hetero : t.hetero;
      const auto pred_head = t.pred_head ? t.pred_head : t.head;
      const auto pred_label = t.pred_label ? t.pred_label : t.label;
      if (profile == Profile::conllx) {
        os << i + 1 << '\t' << t.form << '\t' << nonempty(t.lemma) << '\t'
           << nonempty(t.tag.empty() ? pred_tag : t.tag) << '\t' << nonempty(pred_tag) << '\t'
           << feats(pred_hetero) << '\t' << head_str(pred_head) << '\t' << or_blank(pred_label)
           << "\t_\t_\n";
      } else {
        const auto gold_head = t.head ? t.head : pred_head;
        const auto gold_label = t.label ? t.label : pred_label;
        os << i + 1 << '\t' << t.form << '\t' << nonempty(t.lemma) << '\t' << nonempty(t.lemma)
           << '\t' << nonempty(t.tag.empty() ? pred_tag : t.tag) << '\t' << nonempty(pred_tag)
           << '\t' << feats(t.hetero ? t.hetero : pred_hetero) << '\t' << feats(pred_hetero)
           << '\t' << head_str(gold_head) << '\t' << head_str(pred_head) << '\t'
           << or_blank(gold_label) << '\t' << or_blank(pred_label) << "\t_\t_\n";
      }
    }
    os << '\n';
  }
  return os.str();
}

void write_conll(std::span<const Sentence> sentences, const std::string& path, Profile profile) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << format_conll(sentences, profile);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Sentence as_predictions(const Sentence& s) {
  Sentence out = s;
  for (auto& t : out.tokens) {
    if (t.pred_tag) t.tag = *t.pred_tag;
    if (t.pred_hetero) t.hetero = t.pred_hetero;
    if (t.pred_head) t.head = t.pred_head;
    if (t.pred_label) t.label = t.pred_label;
    t.pred_tag.reset();
    t.pred_hetero.reset();
    t.pred_head.reset();
    t.pred_label.reset();
  }
  return out;
}

void mark_punct(std::vector<Sentence>& sentences, const std::set<std::string>& punct_tags) {
  for (auto& s : sentences) {
    for (auto& t : s.tokens) t.is_punct = punct_tags.count(t.tag) != 0;
  }
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const double* PretrainedTable::find(const std::string& word) const {
  auto it = index.find(word);
  if (it == index.end()) return nullptr;
  return table.data().data() + static_cast<std::size_t>(it->second) * dim;
}

PretrainedTable load_pretrained(const std::string& path, std::size_t dim) {
  const std::string text = read_file(path);
  PretrainedTable out;
  out.dim = dim;
  std::vector<double> values;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (is_blank(lines[ln])) continue;
    std::istringstream ss{std::string(lines[ln])};
    std::vector<std::string> fields;
    std::string f;
    while (ss >> f) fields.push_back(f);
    if (ln == 0 && fields.size() == 2 && parse_int(fields[0]) && parse_int(fields[1]) && dim != 1) {
      continue;
    }
    if (fields.size() != dim + 1) {
      throw ParseError(path + ": expected " + std::to_string(dim) + " values, found " +
                           std::to_string(fields.size() - 1),
                       ln + 1);
    }
    std::vector<double> row(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      try {
        std::size_t used = 0;
        row[k] = std::stod(fields[k + 1], &used);
        if (used != fields[k + 1].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(path + ": bad number '" + fields[k + 1] + "'", ln + 1);
      }
    }
    auto [it, inserted] = out.index.emplace(fields[0], static_cast<int>(values.size() / dim));
    if (inserted) {
      values.insert(values.end(), row.begin(), row.end());
    } else {
      std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(it->second * dim));
      out.warnings.push_back(path + ": line " + std::to_string(ln + 1) + ": duplicate word '" +
                             fields[0] + "', last entry wins");
      std::cerr << "warning: " << out.warnings.back() << '\n';
    }
  }
  if (values.empty()) {
    out.table = ad::Tensor({1, dim == 0 ? 1 : dim}, 0.0);
  } else {
    const std::size_t rows = values.size() / dim;
    out.table = ad::Tensor({rows, dim}, std::move(values));
  }
  return out;
}

namespace {

int intern(std::vector<std::string>& items, std::unordered_map<std::string, int>& index,
           const std::string& key) {
  auto [it, inserted] = index.emplace(key, static_cast<int>(items.size()));
  if (inserted) items.push_back(key);
  return it->second;
}

int lookup(const std::unordered_map<std::string, int>& index, const std::string& key, int missing) {
  auto it = index.find(key);
  return it == index.end() ? missing : it->second;
}

}  // namespace

Vocab Vocab::build(std::span<const Sentence> treebank, std::span<const Sentence> hetero,
                   int min_frequency) {
  Vocab v;
  v.words_ = {kOovForm, kRootForm};
  v.chars_ = {kOovForm, kRootForm};
  std::unordered_map<std::string, int> freq;
  std::vector<std::string> order;
  for (const auto& s : treebank) {
    for (const auto& t : s.tokens) {
      if (t.form == kOovForm || t.form == kRootForm) continue;
      if (freq[t.form]++ == 0) order.push_back(t.form);
    }
  }
  v.rebuild_index();
  for (const auto& w : order) {
    if (freq[w] >= min_frequency) intern(v.words_, v.word_index_, w);
  }
  for (const auto* corpus : {&treebank, &hetero}) {
    for (const auto& s : *corpus) {
      for (const auto& t : s.tokens) {
        if (t.form == kOovForm || t.form == kRootForm) continue;
        for (const auto& ch : utf8_chars(t.form)) intern(v.chars_, v.char_index_, ch);
      }
    }
  }
  for (const auto& s : treebank) {
    for (const auto& t : s.tokens) {
      if (!t.tag.empty()) intern(v.tags_, v.tag_index_, t.tag);
      if (t.label) intern(v.labels_, v.label_index_, *t.label);
    }
  }
  for (const auto& s : hetero) {
    for (const auto& t : s.tokens) {
      if (t.hetero) intern(v.hetero_, v.hetero_index_, *t.hetero);
    }
  }
  return v;
}

void Vocab::rebuild_index() {
  auto index_of = [](const std::vector<std::string>& items, std::unordered_map<std::string, int>& idx) {
    idx.clear();
    for (std::size_t i = 0; i < items.size(); ++i) idx.emplace(items[i], static_cast<int>(i));
  };
  index_of(words_, word_index_);
  index_of(chars_, char_index_);
  index_of(tags_, tag_index_);
  index_of(hetero_, hetero_index_);
  index_of(labels_, label_index_);
}

int Vocab::word_id(const std::string& form) const { return lookup(word_index_, form, kOov); }
int Vocab::char_id(const std::string& ch) const { return lookup(char_index_, ch, kOov); }
int Vocab::tag_id(const std::string& tag) const { return lookup(tag_index_, tag, -1); }
int Vocab::hetero_id(const std::string& tag) const { return lookup(hetero_index_, tag, -1); }
int Vocab::label_id(const std::string& label) const { return lookup(label_index_, label, -1); }

std::vector<Sentence> Vocab::fold(std::span<const Sentence> sentences) const {
  std::vector<Sentence> out(sentences.begin(), sentences.end());
  for (auto& s : out) {
    for (auto& t : s.tokens) {
      if (word_id(t.form) == kOov) t.form = kOovForm;
    }
  }
  return out;
}

EncodedSentence Vocab::encode(const Sentence& s) const {
  EncodedSentence e;
  e.source = s.source;
  const std::size_t n = s.tokens.size();
  e.words.reserve(n + 1);
  e.words.push_back(kRoot);
  e.chars.push_back({kRoot});
  e.input_tags.push_back(root_tag_index());
  e.input_hetero.push_back(root_hetero_index());
  e.has_tags = s.source == Source::treebank;
  e.has_hetero = true;
  e.has_tree = s.source == Source::treebank;
  for (const auto& t : s.tokens) {
    e.words.push_back(word_id(t.form));
    std::vector<int> chars;
    for (const auto& ch : utf8_chars(t.form)) chars.push_back(char_id(ch));
    if (chars.empty()) throw ValidationError("token with an empty form");
    e.chars.push_back(std::move(chars));
    const int in_tag = tag_id(t.input_tag());
    e.input_tags.push_back(in_tag < 0 ? unknown_tag_index() : in_tag);
    const auto in_het = t.input_hetero();
    const int het_in = in_het ? hetero_id(*in_het) : -1;
    e.input_hetero.push_back(het_in < 0 ? unknown_hetero_index() : het_in);
    e.tags.push_back(t.tag.empty() ? -1 : tag_id(t.tag));
    e.hetero_tags.push_back(t.hetero ? hetero_id(*t.hetero) : -1);
    e.heads.push_back(t.head.value_or(-1));
    e.labels.push_back(t.label ? label_id(*t.label) : -1);
    if (e.tags.back() < 0) e.has_tags = false;
    if (e.hetero_tags.back() < 0) e.has_hetero = false;
    if (e.heads.back() < 0 || e.labels.back() < 0) e.has_tree = false;
  }
  if (s.source == Source::hetero_tags) e.has_tags = false;
  return e;
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  auto section = [&](const char* name, const std::vector<std::string>& items) {
    os << name << ' ' << items.size() << '\n';
    for (const auto& it : items) os << it << '\n';
  };
  section("words", words_);
  section("chars", chars_);
  section("tags", tags_);
  section("hetero", hetero_);
  section("labels", labels_);
  return os.str();
}

Vocab Vocab::deserialize(std::string_view text) {
  Vocab v;
  const auto lines = split_lines(text);
  std::size_t ln = 0;
  auto section = [&](const std::string& name, std::vector<std::string>& items) {
    if (ln >= lines.size()) throw ValidationError("vocab: missing section " + name);
    std::istringstream head{std::string(lines[ln++])};
    std::string got;
    std::size_t count = 0;
    head >> got >> count;
    if (got != name) throw ValidationError("vocab: expected section " + name + ", found " + got);
    for (std::size_t i = 0; i < count; ++i) {
      if (ln >= lines.size()) throw ValidationError("vocab: truncated section " + name);
      items.emplace_back(lines[ln++]);
    }
  };
  section("words", v.words_);
  section("chars", v.chars_);
  section("tags", v.tags_);
  section("hetero", v.hetero_);
  section("labels", v.labels_);
  v.rebuild_index();
  return v;
}

ad::Tensor Vocab::align_pretrained(const PretrainedTable* table, std::size_t dim) const {
  ad::Tensor out({words_.size(), dim}, 0.0);
  if (!table) return out;
  if (table->dim != dim) {
    throw ConfigError("pretrained dim " + std::to_string(table->dim) + " != word dim " +
                      std::to_string(dim));
  }
  for (std::size_t w = 2; w < words_.size(); ++w) {
    const double* row = table->find(words_[w]);
    if (!row) row = table->find(ascii_lower(words_[w]));
    if (row) std::copy_n(row, dim, out.data().data() + w * dim);
  }
  return out;
}

bool Vocab::operator==(const Vocab& other) const {
  return words_ == other.words_ && chars_ == other.chars_ && tags_ == other.tags_ &&
         hetero_ == other.hetero_ && labels_ == other.labels_;
}

}  // namespace posdep::corpus
