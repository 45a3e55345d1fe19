#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "posdep/decode.hpp"
#include "posdep/error.hpp"
#include "posdep/jackknife.hpp"
#include "posdep/models.hpp"
#include "posdep/train_eval.hpp"
#include "posdep/tree.hpp"

namespace py = pybind11;
using namespace posdep;

namespace {

ad::Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("score matrix is empty");
  const std::size_t cols = rows[0].size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("score matrix rows differ in length");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return ad::Tensor({rows.size(), cols}, std::move(flat));
}

py::dict report_dict(const train::EvalReport& r) {
  py::dict d;
  d["TA"] = r.has_tags ? py::cast(r.ta) : py::none();
  d["hetero_TA"] = r.hetero_ta ? py::cast(*r.hetero_ta) : py::none();
  d["UAS"] = r.has_heads ? py::cast(r.uas) : py::none();
  d["LAS"] = r.has_heads ? py::cast(r.las) : py::none();
  d["tokens"] = r.total;
  d["scored"] = r.scored;
  d["excluded"] = r.excluded;
  d["decode"] = r.decode;
  return d;
}

corpus::Profile profile_of(const std::string& name) { return corpus::parse_profile(name); }

train::TrainOptions options_from(const py::dict& kw) {
  train::TrainOptions o;
  for (auto [k, v] : kw) {
    const auto key = k.cast<std::string>();
    if (key == "max_epochs") o.max_epochs = v.cast<std::size_t>();
    else if (key == "patience") o.patience = v.cast<std::size_t>();
    else if (key == "batch_tokens") o.batch_tokens = v.cast<std::size_t>();
    else if (key == "hetero_ratio") o.hetero_ratio = v.cast<double>();
    else if (key == "exclude_punct") o.exclude_punct = v.cast<bool>();
    else if (key == "seed") o.seed = v.cast<std::uint64_t>();
    else if (key == "lr") o.optimizer.lr = v.cast<double>();
    else if (key == "dev_decode") o.dev_decoder = decode::parse_decoder(v.cast<std::string>());
    else if (key == "on_epoch") {
      auto fn = v.cast<std::function<void(py::dict)>>();
      o.on_epoch = [fn](const train::EpochRecord& r) {
        py::dict d;
        d["epoch"] = r.epoch;
        d["L_DEP"] = r.l_dep;
        d["L_POS"] = r.l_pos;
        d["L_POS'"] = r.l_pos_hetero;
        d["dev"] = report_dict(r.dev);
        d["improved"] = r.improved;
        fn(d);
      };
    } else {
      throw ConfigError("unknown training option '" + key + "'");
    }
  }
  return o;
}

}  // namespace

PYBIND11_MODULE(_posdep, m) {
  m.doc() = "Joint POS tagging and dependency parsing";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<AlignmentError>(m, "AlignmentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<corpus::Token>(m, "Token")
      .def(py::init<>())
      .def_readwrite("form", &corpus::Token::form)
      .def_readwrite("lemma", &corpus::Token::lemma)
      .def_readwrite("tag", &corpus::Token::tag)
      .def_readwrite("hetero", &corpus::Token::hetero)
      .def_readwrite("head", &corpus::Token::head)
      .def_readwrite("label", &corpus::Token::label)
      .def_readwrite("pred_tag", &corpus::Token::pred_tag)
      .def_readwrite("pred_hetero", &corpus::Token::pred_hetero)
      .def_readwrite("pred_head", &corpus::Token::pred_head)
      .def_readwrite("pred_label", &corpus::Token::pred_label)
      .def_readwrite("is_punct", &corpus::Token::is_punct)
      .def("__repr__", [](const corpus::Token& t) { return "<Token " + t.form + "/" + t.tag + ">"; });

  py::class_<corpus::Sentence>(m, "Sentence")
      .def(py::init<>())
      .def_readwrite("tokens", &corpus::Sentence::tokens)
      .def("__len__", &corpus::Sentence::size)
      .def("gold_heads", &corpus::Sentence::gold_heads);

  m.def("read_conll", [](const std::string& path, const std::string& profile, bool validate) {
    corpus::ReadOptions o;
    o.validate_trees = validate;
    return corpus::read_conll(path, profile_of(profile), o);
  }, py::arg("path"), py::arg("profile") = "conllx", py::arg("validate_trees") = true);
  m.def("parse_conll", [](const std::string& text, const std::string& profile, bool validate) {
    corpus::ReadOptions o;
    o.validate_trees = validate;
    return corpus::parse_conll(text, profile_of(profile), o);
  }, py::arg("text"), py::arg("profile") = "conllx", py::arg("validate_trees") = true);
  m.def("read_tag_corpus", &corpus::read_tag_corpus, py::arg("path"));
  m.def("format_conll", [](const std::vector<corpus::Sentence>& s, const std::string& profile) {
    return corpus::format_conll(s, profile_of(profile));
  }, py::arg("sentences"), py::arg("profile") = "conllx");
  m.def("write_conll", [](const std::vector<corpus::Sentence>& s, const std::string& path,
                          const std::string& profile) {
    corpus::write_conll(s, path, profile_of(profile));
  }, py::arg("sentences"), py::arg("path"), py::arg("profile") = "conllx");

  m.def("decode_tree_mst", [](const std::vector<std::vector<double>>& s) {
    return decode::decode_tree_mst(to_matrix(s));
  }, py::arg("scores"), "Best single-rooted tree; scores[d-1][h] for dependent d and head h.");
  m.def("decode_tree_greedy", [](const std::vector<std::vector<double>>& s) {
    return decode::decode_tree_greedy(to_matrix(s));
  }, py::arg("scores"));
  m.def("tree_score", [](const std::vector<std::vector<double>>& s, const std::vector<int>& heads) {
    return decode::tree_score(to_matrix(s), heads);
  }, py::arg("scores"), py::arg("heads"));
  m.def("is_arborescence", [](const std::vector<int>& heads) { return is_arborescence(heads); },
        py::arg("heads"));
  m.def("tree_defect", [](const std::vector<int>& heads) { return tree_defect(heads); },
        py::arg("heads"));

  m.def("evaluate", [](const std::vector<corpus::Sentence>& gold,
                       const std::vector<corpus::Sentence>& pred, bool exclude_punct) {
    return report_dict(train::evaluate(gold, pred, exclude_punct));
  }, py::arg("gold"), py::arg("predicted"), py::arg("exclude_punct") = false);
  m.def("significance", [](const std::vector<corpus::Sentence>& gold,
                           const std::vector<corpus::Sentence>& a,
                           const std::vector<corpus::Sentence>& b, const std::string& metric,
                           bool exclude_punct, std::size_t trials, std::uint64_t seed) {
    const auto r = train::significance(gold, a, b, train::parse_metric(metric), exclude_punct,
                                       trials, seed);
    py::dict d;
    d["test"] = r.test;
    d["metric"] = train::to_string(r.metric);
    d["A"] = r.score_a;
    d["B"] = r.score_b;
    d["trials"] = r.trials;
    d["seed"] = r.seed;
    d["p"] = r.p_value;
    return d;
  }, py::arg("gold"), py::arg("a"), py::arg("b"), py::arg("metric") = "las",
     py::arg("exclude_punct") = false, py::arg("trials") = 10000, py::arg("seed") = 1);

  py::class_<models::ModelSpec>(m, "ModelSpec")
      .def(py::init([](const py::kwargs& kw) {
        models::ModelSpec s;
        for (auto [k, v] : kw) s.set(k.cast<std::string>(), py::str(v).cast<std::string>());
        s.validate();
        return s;
      }))
      .def("get", &models::ModelSpec::get)
      .def("set", &models::ModelSpec::set)
      .def("to_text", &models::ModelSpec::to_text)
      .def_static("from_text", &models::ModelSpec::from_text)
      .def_static("keys", &models::ModelSpec::keys)
      .def("__eq__", [](const models::ModelSpec& a, const models::ModelSpec& b) { return a == b; });

  m.def("framework_names", &models::framework_names);

  py::class_<models::Model, std::unique_ptr<models::Model>>(m, "Model")
      .def(py::init([](const models::ModelSpec& spec, const std::vector<corpus::Sentence>& treebank,
                       const std::vector<corpus::Sentence>& hetero, int min_freq) {
        return std::make_unique<models::Model>(spec, corpus::Vocab::build(treebank, hetero, min_freq));
      }), py::arg("spec"), py::arg("treebank"), py::arg("hetero") = std::vector<corpus::Sentence>{},
           py::arg("min_freq") = corpus::Vocab::kMinWordFrequency)
      .def_property_readonly("spec", &models::Model::spec)
      .def("parameter_names", [](models::Model& model) {
        std::vector<std::string> names;
        for (const auto& e : model.params().entries()) names.push_back(e.name);
        return names;
      })
      .def("save", [](models::Model& model, const std::string& path) {
        models::save_checkpoint(model, path);
      }, py::arg("path"))
      .def_static("load", &models::load_checkpoint, py::arg("path"))
      .def("train", [](models::Model& model, const std::vector<corpus::Sentence>& train_set,
                       const std::vector<corpus::Sentence>& dev,
                       const std::vector<corpus::Sentence>& hetero, const py::kwargs& kw) {
        train::TrainData d;
        d.train = train_set;
        d.dev = dev;
        d.hetero = hetero;
        const auto r = train::train(model, d, options_from(kw));
        py::dict out;
        out["epochs"] = r.log.size();
        out["best_epoch"] = r.best_epoch;
        out["stopped_early"] = r.stopped_early;
        out["best_dev"] = report_dict(r.best_dev);
        return out;
      }, py::arg("train"), py::arg("dev"), py::arg("hetero") = std::vector<corpus::Sentence>{})
      .def("predict", [](const models::Model& model, const std::vector<corpus::Sentence>& s,
                         const std::string& decoder) {
        return train::predict(model, s, decode::parse_decoder(decoder));
      }, py::arg("sentences"), py::arg("decode") = "mst");

  m.def("make_folds", &train::make_folds, py::arg("count"), py::arg("k") = 5, py::arg("seed") = 1);
}
