// posdep: train, predict, evaluate, analyze, jackknife, significance.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "posdep/context_layers.hpp"
#include "posdep/corpus.hpp"
#include "posdep/error.hpp"
#include "posdep/jackknife.hpp"
#include "posdep/models.hpp"
#include "posdep/train_eval.hpp"

namespace fs = std::filesystem;
using namespace posdep;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
  std::string profile = "conllx";
  bool punct_exclude = false;
};

struct ModelFlags {
  std::map<std::string, std::string> values;  // ModelSpec key -> flag text
};

struct TrainFlags {
  std::size_t epochs = 1000;
  std::size_t patience = 0;
  std::size_t batch_tokens = 5000;
  double hetero_ratio = 1.0;
  std::string decode = "mst";
  bool quiet = false;
};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--config", c.config, "Flat key=value file; command-line flags win");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--profile", c.profile, "Column profile")
      ->check(CLI::IsMember({"conllx", "conll09"}))
      ->capture_default_str();
  cmd->add_flag("--punct-exclude", c.punct_exclude,
                "Skip punctuation in UAS/LAS (PTB convention)");
}

void add_model_flags(CLI::App* cmd, ModelFlags& m, bool with_framework) {
  const models::ModelSpec defaults;
  for (const auto& key : models::ModelSpec::keys()) {
    if (key == "seed" || key == "use_context_layers" || key == "context_layers" ||
        key == "context_dim") {
      continue;
    }
    if (key == "framework") {
      if (!with_framework) continue;
      cmd->add_option("--framework", m.values[key], "Model framework")
          ->required()
          ->check(CLI::IsMember(models::framework_names()));
      continue;
    }
    cmd->add_option("--" + dashed(key), m.values[key])->default_str(defaults.get(key));
  }
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--epochs", t.epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", t.patience, "Epochs without dev improvement (0: 100, or 50 with context layers)")
      ->capture_default_str();
  cmd->add_option("--batch-tokens", t.batch_tokens)->capture_default_str();
  cmd->add_option("--hetero-ratio", t.hetero_ratio,
                  "Heterogeneous sentences per treebank sentence each epoch")
      ->capture_default_str();
  cmd->add_option("--dev-decode", t.decode)->check(CLI::IsMember({"mst", "greedy"}))->capture_default_str();
  cmd->add_flag("--quiet", t.quiet, "Do not print per-epoch records");
}

models::ModelSpec build_spec(const ModelFlags& m, std::uint64_t seed) {
  models::ModelSpec spec;
  for (const auto& [key, value] : m.values) {
    if (!value.empty()) spec.set(key, value);
  }
  spec.seed = seed;
  return spec;
}

train::TrainOptions train_options(const TrainFlags& t, const Common& c) {
  train::TrainOptions o;
  o.max_epochs = t.epochs;
  o.patience = t.patience;
  o.batch_tokens = t.batch_tokens;
  o.hetero_ratio = t.hetero_ratio;
  o.dev_decoder = decode::parse_decoder(t.decode);
  o.exclude_punct = c.punct_exclude;
  o.seed = c.seed;
  if (!t.quiet) {
    o.on_epoch = [](const train::EpochRecord& r) { std::cerr << train::format_epoch(r) << '\n'; };
  }
  return o;
}

std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Reads a flat key=value file into "--key=value" arguments.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ": line " + std::to_string(ln) + " is not key=value");
    }
    out.push_back("--" + dashed(trim(line.substr(0, eq))) + "=" + strip_quotes(trim(line.substr(eq + 1))));
  }
  return out;
}

std::string flag_name(const std::string& arg) {
  const auto eq = arg.find('=');
  return arg.substr(0, eq);
}

// Appends config-file entries for flags not given on the command line.
std::vector<std::string> merge_config(const std::vector<std::string>& argv) {
  std::vector<std::string> out = argv;
  std::string path;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--config" && i + 1 < argv.size()) path = argv[i + 1];
    if (argv[i].rfind("--config=", 0) == 0) path = argv[i].substr(9);
  }
  if (path.empty()) return out;
  std::set<std::string> given;
  for (const auto& a : argv) {
    if (a.rfind("--", 0) == 0) given.insert(flag_name(a));
  }
  for (const auto& a : config_args(path)) {
    const std::string name = flag_name(a);
    if (name == "--config" || given.count(name)) continue;
    out.push_back(a);
  }
  return out;
}

// key=value lines for every option of a subcommand, re-runnable via --config.
std::string effective_config(const CLI::App* cmd) {
  std::ostringstream os;
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "out") continue;
    std::string value;
    if (opt->count() > 0) {
      value = opt->get_expected_min() == 0 ? "true" : opt->results().back();
    } else if (opt->get_expected_min() == 0) {
      value = "false";
    } else {
      value = opt->get_default_str();
      if (value.empty()) continue;
    }
    os << name << '=' << value << '\n';
  }
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

std::string extension(corpus::Profile p) { return p == corpus::Profile::conllx ? ".conllx" : ".conll09"; }

std::vector<corpus::Sentence> read_treebank(const std::string& path, const Common& c,
                                            bool validate = true) {
  corpus::ReadOptions opt;
  opt.validate_trees = validate;
  return corpus::read_conll(path, corpus::parse_profile(c.profile), opt);
}

std::vector<std::size_t> lengths(const std::vector<corpus::Sentence>& s) {
  std::vector<std::size_t> out;
  for (const auto& x : s) out.push_back(x.size());
  return out;
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint POS tagging and dependency parsing"};
  app.require_subcommand(1);

  // train
  Common train_c;
  ModelFlags train_m;
  TrainFlags train_t;
  std::string train_path, dev_path, hetero_path, pretrained_path, ctx_train, ctx_dev, ctx_hetero;
  int min_freq = corpus::Vocab::kMinWordFrequency;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, train_c, true);
  add_model_flags(train_cmd, train_m, true);
  add_train_flags(train_cmd, train_t);
  train_cmd->add_option("--train", train_path, "Training treebank")->required();
  train_cmd->add_option("--dev", dev_path, "Development treebank")->required();
  train_cmd->add_option("--hetero", hetero_path, "Heterogeneous tag corpus (form<TAB>tag)");
  train_cmd->add_option("--pretrained", pretrained_path, "Pretrained word vectors (text)");
  train_cmd->add_option("--context-train", ctx_train, "Contextual layers for the training treebank");
  train_cmd->add_option("--context-dev", ctx_dev, "Contextual layers for the development treebank");
  train_cmd->add_option("--context-hetero", ctx_hetero, "Contextual layers for the hetero corpus");
  train_cmd->add_option("--min-freq", min_freq, "Minimum training frequency for a word id")
      ->capture_default_str();

  // predict
  Common pred_c;
  std::string model_path, input_path, ctx_input, decode_mode = "mst";
  auto* pred_cmd = app.add_subcommand("predict", "Tag and parse a treebank");
  add_common(pred_cmd, pred_c, true);
  pred_cmd->add_option("--model", model_path, "Checkpoint")->required();
  pred_cmd->add_option("--input", input_path, "Input treebank")->required();
  pred_cmd->add_option("--context", ctx_input, "Contextual layers for the input");
  pred_cmd->add_option("--decode", decode_mode, "Tree decoder")
      ->check(CLI::IsMember({"mst", "greedy"}))
      ->capture_default_str();

  // evaluate
  Common eval_c;
  std::string gold_path, system_path;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a prediction file against gold");
  add_common(eval_cmd, eval_c, false);
  eval_cmd->add_option("--gold", gold_path)->required();
  eval_cmd->add_option("--pred", system_path)->required();

  // analyze
  Common an_c;
  std::string an_gold, an_a, an_b;
  auto* an_cmd = app.add_subcommand("analyze", "Per-POS deltas and tagging-pattern tables");
  add_common(an_cmd, an_c, true);
  an_cmd->add_option("--gold", an_gold)->required();
  an_cmd->add_option("--pred-a", an_a, "Baseline system")->required();
  an_cmd->add_option("--pred-b", an_b, "Compared system");

  // jackknife
  Common jk_c;
  ModelFlags jk_m;
  TrainFlags jk_t;
  std::string jk_train, jk_hetero;
  std::size_t jk_k = 5;
  auto* jk_cmd = app.add_subcommand("jackknife", "Attach k-fold predicted tags to a treebank");
  add_common(jk_cmd, jk_c, true);
  add_model_flags(jk_cmd, jk_m, false);
  add_train_flags(jk_cmd, jk_t);
  jk_cmd->add_option("--train", jk_train, "Treebank to tag")->required();
  jk_cmd->add_option("--hetero", jk_hetero, "Heterogeneous tag corpus");
  jk_cmd->add_option("--k", jk_k, "Folds")->capture_default_str();

  // significance
  Common sig_c;
  std::string sig_gold, sig_a, sig_b, sig_metric = "las";
  std::size_t sig_trials = 10000;
  auto* sig_cmd = app.add_subcommand("significance", "Paired permutation test between two systems");
  add_common(sig_cmd, sig_c, false);
  sig_cmd->add_option("--gold", sig_gold)->required();
  sig_cmd->add_option("--pred-a", sig_a)->required();
  sig_cmd->add_option("--pred-b", sig_b)->required();
  sig_cmd->add_option("--metric", sig_metric)->check(CLI::IsMember({"ta", "uas", "las"}))->capture_default_str();
  sig_cmd->add_option("--trials", sig_trials)->capture_default_str();

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = merge_config(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      const fs::path out = prepare_out(train_c);
      train::TrainData data;
      data.train = read_treebank(train_path, train_c);
      data.dev = read_treebank(dev_path, train_c);
      if (!hetero_path.empty()) data.hetero = corpus::read_tag_corpus(hetero_path);
      auto spec = build_spec(train_m, train_c.seed);
      if (!ctx_train.empty()) {
        if (ctx_dev.empty()) throw ConfigError("--context-train needs --context-dev");
        data.train_context = nn::read_context_layers(ctx_train, lengths(data.train));
        data.dev_context = nn::read_context_layers(ctx_dev, lengths(data.dev));
        if (!data.hetero.empty()) {
          if (ctx_hetero.empty()) throw ConfigError("--hetero with context layers needs --context-hetero");
          data.hetero_context = nn::read_context_layers(ctx_hetero, lengths(data.hetero));
        }
        spec.use_context_layers = true;
        spec.context_layers = data.train_context->layer_count;
        spec.context_dim = data.train_context->dim;
      }
      if (spec.use_hetero && data.hetero.empty() && !spec.consumes_tags()) {
        throw ConfigError("use_hetero needs --hetero");
      }
      const auto vocab = corpus::Vocab::build(data.train, data.hetero, min_freq);
      ad::Tensor table;
      if (!pretrained_path.empty()) {
        const auto pre = corpus::load_pretrained(pretrained_path, spec.word_dim);
        table = vocab.align_pretrained(&pre, spec.word_dim);
      }
      models::Model model(spec, vocab, table);
      std::ofstream log(out / "train.log");
      auto opts = train_options(train_t, train_c);
      auto print = opts.on_epoch;
      opts.on_epoch = [&](const train::EpochRecord& r) {
        log << train::format_epoch(r) << '\n';
        log.flush();
        if (print) print(r);
      };
      write_text(out / "config.txt", effective_config(train_cmd));
      const auto result = train::train(model, data, opts);
      models::save_checkpoint(model, (out / "model.ckpt").string());
      std::ostringstream summary;
      summary << "best_epoch=" << result.best_epoch << '\n'
              << "epochs=" << result.log.size() << '\n'
              << "stopped_early=" << (result.stopped_early ? "true" : "false") << '\n'
              << train::format_report(result.best_dev);
      write_text(out / "dev_report.txt", summary.str());
      std::cout << summary.str();
      return 0;
    }
    if (*pred_cmd) {
      const fs::path out = prepare_out(pred_c);
      const auto model = models::load_checkpoint(model_path);
      auto input = read_treebank(input_path, pred_c);
      std::optional<nn::ContextLayers> ctx;
      if (model->uses_context()) {
        if (ctx_input.empty()) throw ConfigError("this model needs --context");
        ctx = nn::read_context_layers(ctx_input, lengths(input));
      }
      const auto decoder = decode::parse_decoder(decode_mode);
      const auto pred = train::predict(*model, input, decoder, ctx ? &*ctx : nullptr);
      // Unpredicted columns pass through from the input.
      std::vector<corpus::Sentence> merged = input;
      for (std::size_t i = 0; i < merged.size(); ++i) {
        for (std::size_t j = 0; j < merged[i].size(); ++j) {
          auto& t = merged[i].tokens[j];
          const auto& p = pred[i].tokens[j];
          if (p.pred_tag) t.pred_tag = p.pred_tag;
          if (p.pred_hetero) t.pred_hetero = p.pred_hetero;
          if (p.pred_head) t.pred_head = p.pred_head;
          if (p.pred_label) t.pred_label = p.pred_label;
        }
      }
      const auto profile = corpus::parse_profile(pred_c.profile);
      corpus::write_conll(merged, (out / ("predictions" + extension(profile))).string(), profile);
      const auto report = train::evaluate(input, pred, pred_c.punct_exclude, decode_mode);
      std::string text = "framework=" + models::to_string(model->spec().framework) + "\n" +
                         train::format_report(report);
      write_text(out / "report.txt", text);
      write_text(out / "config.txt", effective_config(pred_cmd));
      std::cout << text;
      return 0;
    }
    if (*eval_cmd) {
      const auto gold = read_treebank(gold_path, eval_c);
      const auto pred = read_treebank(system_path, eval_c, false);
      const auto text = train::format_report(train::evaluate(gold, pred, eval_c.punct_exclude, "file"));
      if (!eval_c.out.empty()) {
        const fs::path out = prepare_out(eval_c);
        write_text(out / "report.txt", text);
        write_text(out / "config.txt", effective_config(eval_cmd));
      }
      std::cout << text;
      return 0;
    }
    if (*an_cmd) {
      const fs::path out = prepare_out(an_c);
      const auto gold = read_treebank(an_gold, an_c);
      const auto a = read_treebank(an_a, an_c, false);
      write_text(out / "patterns_a.tsv", train::format_patterns(train::pattern_table(gold, a, an_c.punct_exclude)));
      if (!an_b.empty()) {
        const auto b = read_treebank(an_b, an_c, false);
        write_text(out / "patterns_b.tsv",
                   train::format_patterns(train::pattern_table(gold, b, an_c.punct_exclude)));
        const auto delta = train::format_pos_delta(train::per_pos_delta(gold, a, b, an_c.punct_exclude));
        write_text(out / "pos_delta.tsv", delta);
        std::cout << delta;
      }
      write_text(out / "config.txt", effective_config(an_cmd));
      return 0;
    }
    if (*jk_cmd) {
      const fs::path out = prepare_out(jk_c);
      const auto treebank = read_treebank(jk_train, jk_c);
      std::vector<corpus::Sentence> hetero;
      if (!jk_hetero.empty()) hetero = corpus::read_tag_corpus(jk_hetero);
      train::JackknifeOptions o;
      o.k = jk_k;
      o.seed = jk_c.seed;
      o.tagger = build_spec(jk_m, jk_c.seed);
      o.training = train_options(jk_t, jk_c);
      const auto result = train::jackknife_tags(treebank, o, hetero);
      const auto profile = corpus::parse_profile(jk_c.profile);
      corpus::write_conll(result.tagged, (out / ("jackknifed" + extension(profile))).string(), profile);
      std::ostringstream folds;
      folds << "sentence\tfold\n";
      std::vector<std::size_t> fold_of(treebank.size());
      for (std::size_t f = 0; f < result.folds.size(); ++f) {
        for (std::size_t i : result.folds[f]) fold_of[i] = f;
      }
      for (std::size_t i = 0; i < fold_of.size(); ++i) folds << i + 1 << '\t' << fold_of[i] << '\n';
      write_text(out / "folds.tsv", folds.str());
      write_text(out / "config.txt", effective_config(jk_cmd));
      const auto report = train::evaluate(treebank, result.tagged, false, "none");
      std::cout << "jackknife_TA=" << std::fixed << std::setprecision(2) << report.ta << '\n';
      return 0;
    }
    if (*sig_cmd) {
      const auto gold = read_treebank(sig_gold, sig_c);
      const auto a = read_treebank(sig_a, sig_c, false);
      const auto b = read_treebank(sig_b, sig_c, false);
      const auto r = train::significance(gold, a, b, train::parse_metric(sig_metric),
                                         sig_c.punct_exclude, sig_trials, sig_c.seed);
      const auto text = train::format_significance(r);
      if (!sig_c.out.empty()) {
        const fs::path out = prepare_out(sig_c);
        write_text(out / "significance.txt", text);
        write_text(out / "config.txt", effective_config(sig_cmd));
      }
      std::cout << text;
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
