#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "posdep/corpus.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "posdep_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  const fs::path log = scratch() / "stdout.txt";
  const std::string cmd = std::string(POSDEP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string data(const std::string& name) { return std::string(POSDEP_DATA_DIR) + "/toy/" + name; }

const std::string kTiny =
    " --word-dim 4 --tag-dim 3 --char-dim 3 --char-out 4 --lstm-hidden 4 --lstm-layers 1"
    " --tag-mlp 4 --arc-mlp 4 --label-mlp 3 --batch-tokens 60 --quiet";

const fs::path& trained_model() {
  static const fs::path dir = [] {
    const fs::path d = scratch() / "model";
    const auto r = cli("train --framework stack --train " + data("train.conllx") + " --dev " +
                       data("dev.conllx") + " --epochs 2 --out " + d.string() + kTiny);
    REQUIRE_MESSAGE(r.code == 0, r.out);
    return d;
  }();
  return dir;
}

std::size_t token_count(const std::string& path) {
  std::size_t n = 0;
  posdep::corpus::ReadOptions lax;
  lax.validate_trees = false;
  for (const auto& s : posdep::corpus::read_conll(path, posdep::corpus::Profile::conllx, lax)) {
    n += s.size();
  }
  return n;
}

}  // namespace

TEST_CASE("cli usage errors exit with 2") {
  CHECK(cli("train --dev " + data("dev.conllx") + " --framework stack --out " +
            (scratch() / "x").string()).code == 2);
  const auto r = cli("train --train " + data("train.conllx") + " --dev " + data("dev.conllx") +
                     " --framework joint --out " + (scratch() / "x").string());
  CHECK(r.code == 2);
  CHECK(r.out.find("share-tight") != std::string::npos);
  CHECK(cli("bogus").code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("cli runtime errors exit with 1") {
  const auto r = cli("predict --model /nonexistent.ckpt --input " + data("dev.conllx") + " --out " +
                     (scratch() / "p").string());
  CHECK(r.code == 1);
  CHECK(r.out.find("nonexistent") != std::string::npos);
}

TEST_CASE("cli train artifacts and config echo") {
  const auto& d = trained_model();
  for (const char* f : {"model.ckpt", "train.log", "config.txt", "dev_report.txt"}) {
    CHECK(fs::exists(d / f));
  }
  const auto config = slurp(d / "config.txt");
  CHECK(config.find("framework=stack") != std::string::npos);
  CHECK(config.find("lstm-hidden=4") != std::string::npos);
  std::istringstream log(slurp(d / "train.log"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 2);

  // Re-running from the echoed config reproduces the same log.
  const fs::path again = scratch() / "model_again";
  const auto r = cli("train --config " + (d / "config.txt").string() + " --out " + again.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  auto strip_time = [](std::string s) {
    std::string out;
    std::istringstream in(s);
    std::string l;
    while (std::getline(in, l)) out += l.substr(0, l.find(" seconds=")) + "\n";
    return out;
  };
  CHECK(strip_time(slurp(again / "train.log")) == strip_time(slurp(d / "train.log")));
}

TEST_CASE("cli predict and evaluate") {
  const auto& d = trained_model();
  const fs::path out = scratch() / "pred";
  const auto r = cli("predict --model " + (d / "model.ckpt").string() + " --input " +
                     data("dev.conllx") + " --decode greedy --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto report = slurp(out / "report.txt");
  CHECK(report.find("decode=greedy") != std::string::npos);
  CHECK(report.find("framework=stack") != std::string::npos);
  CHECK(token_count((out / "predictions.conllx").string()) == token_count(data("dev.conllx")));

  const auto same = cli("evaluate --gold " + data("dev.conllx") + " --pred " + data("dev.conllx"));
  REQUIRE(same.code == 0);
  CHECK(same.out.find("TA=100.00") != std::string::npos);
  CHECK(same.out.find("UAS=100.00") != std::string::npos);
  CHECK(same.out.find("LAS=100.00") != std::string::npos);

  const auto scored = cli("evaluate --gold " + data("dev.conllx") + " --pred " +
                          (out / "predictions.conllx").string());
  CHECK(scored.code == 0);
  CHECK(scored.out.find("UAS=") != std::string::npos);
}

TEST_CASE("cli analyze with identical systems") {
  const fs::path out = scratch() / "analyze";
  const auto r = cli("analyze --gold " + data("dev.conllx") + " --pred-a " + data("dev.conllx") +
                     " --pred-b " + data("dev.conllx") + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  std::istringstream in(slurp(out / "pos_delta.tsv"));
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cols.push_back(c);
    REQUIRE(cols.size() == 9);
    CHECK(cols[5] == "0.00");
    CHECK(cols[8] == "0.00");
  }
  CHECK(rows > 0);
  CHECK(fs::exists(out / "patterns_a.tsv"));
}

TEST_CASE("cli jackknife keeps the treebank") {
  const fs::path out = scratch() / "jk";
  const auto r = cli("jackknife --train " + data("dev.conllx") + " --k 5 --epochs 1 --out " +
                     out.string() + kTiny);
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("jackknife_TA=") != std::string::npos);
  CHECK(token_count((out / "jackknifed.conllx").string()) == token_count(data("dev.conllx")));
  CHECK(fs::exists(out / "folds.tsv"));
}

TEST_CASE("cli significance on identical systems") {
  const auto r = cli("significance --gold " + data("dev.conllx") + " --pred-a " + data("dev.conllx") +
                     " --pred-b " + data("dev.conllx") + " --trials 200");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("p=1\n") != std::string::npos);
  CHECK(r.out.find("paired-permutation") != std::string::npos);
}
