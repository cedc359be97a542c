#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "msg/cli.hpp"
#include "msg/corpus.hpp"
#include "msg/error.hpp"
#include "msg/fixtures.hpp"
#include "test_util.hpp"

using namespace msg;
using msg::test::read_text;
using msg::test::TempDir;
using msg::test::write_text;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kTinyModel{"--emb_dim", "4",       "--enc_hidden", "3", "--dec_hidden", "4",
                                          "--attn_dim", "3",      "--batch_size", "4", "--dropout",    "0",
                                          "--phase1_epochs", "1", "--phase2_epochs", "1"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::set<std::string> words(const std::string& s) {
  const auto t = tokenize(s);
  return {t.begin(), t.end()};
}

}  // namespace

TEST_CASE("fixtures are reproducible and seed dependent") {
  for (auto task : {fixtures::Task::kCopy, fixtures::Task::kMultihop, fixtures::Task::kRepeat}) {
    const auto a = fixtures::make_fixture(task, 20, 5, 7);
    const auto b = fixtures::make_fixture(task, 20, 5, 7);
    const auto c = fixtures::make_fixture(task, 20, 5, 8);
    CHECK(a.train.size() == 20);
    CHECK(a.test.size() == 5);
    CHECK(a.train[3].answer == b.train[3].answer);
    CHECK(a.test[4].sentences == b.test[4].sentences);
    CHECK(a.train[0].sentences != c.train[0].sentences);
  }
  CHECK_THROWS_AS(fixtures::parse_task("bogus"), ConfigError);
}

TEST_CASE("copy fixture answers are the sentence naming the topic") {
  for (const auto& ex : fixtures::make_fixture(fixtures::Task::kCopy, 50, 0, 3).train) {
    const std::string topic = tokenize(ex.question)[2];
    int naming = 0;
    for (const auto& s : ex.sentences) naming += words(s).count(topic) ? 1 : 0;
    CHECK(naming == 1);
    CHECK(words(ex.answer).count(topic) == 1);
    CHECK(std::find(ex.sentences.begin(), ex.sentences.end(), ex.answer) != ex.sentences.end());
  }
}

TEST_CASE("multihop documents are asked once per chain") {
  std::map<std::vector<std::string>, std::set<std::string>> answers;
  for (const auto& ex : fixtures::make_fixture(fixtures::Task::kMultihop, 60, 0, 4).train) answers[ex.sentences].insert(ex.answer);
  int multi = 0;
  for (const auto& [doc, a] : answers) {
    CHECK(a.size() <= doc.size() / 2);
    multi += a.size() >= 2 ? 1 : 0;
  }
  CHECK(multi >= static_cast<int>(answers.size()) - 1);  // only the last document may be cut short
}

TEST_CASE("multihop fixture chains through exactly one bridge word") {
  for (const auto& ex : fixtures::make_fixture(fixtures::Task::kMultihop, 50, 0, 4).train) {
    const std::string topic = tokenize(ex.question)[2];
    int first = -1, second = -1;
    for (int i = 0; i < static_cast<int>(ex.sentences.size()); ++i) {
      for (int j = 0; j < static_cast<int>(ex.sentences.size()); ++j) {
        if (i != j && ex.answer == ex.sentences[i] + " " + ex.sentences[j]) {
          first = i;
          second = j;
        }
      }
    }
    REQUIRE(first >= 0);
    const auto a = words(ex.sentences[first]), b = words(ex.sentences[second]);
    CHECK(a.count(topic) == 1);
    CHECK(b.count(topic) == 0);
    std::vector<std::string> shared;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
    shared.erase(std::remove(shared.begin(), shared.end(), "."), shared.end());
    REQUIRE(shared.size() == 1);
    // the bridge is in no third sentence
    for (int i = 0; i < static_cast<int>(ex.sentences.size()); ++i) {
      if (i != first && i != second) CHECK(words(ex.sentences[i]).count(shared[0]) == 0);
    }
    // the topic appears in no other sentence, so hop 1 can only find the first
    for (int i = 0; i < static_cast<int>(ex.sentences.size()); ++i) {
      if (i != first) CHECK(words(ex.sentences[i]).count(topic) == 0);
    }
  }
}

TEST_CASE("make-fixtures is byte reproducible") {
  TempDir dir("fx");
  const auto a = run({"make-fixtures", "--task", "multihop", "--size", "64", "--seed", "7", "--out", dir.file("a")});
  const auto b = run({"make-fixtures", "--task", "multihop", "--size", "64", "--seed", "7", "--out", dir.file("b")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  for (const char* f : {"/train.jsonl", "/dev.jsonl", "/test.jsonl"}) {
    const auto x = read_text(dir.file("a") + f);
    CHECK_FALSE(x.empty());
    CHECK(x == read_text(dir.file("b") + f));
  }
  CHECK(load_dataset(dir.file("a") + "/train.jsonl", Split::kTrain).size() == 64);
  CHECK(a.err.find("seed = 7") != std::string::npos);
}

TEST_CASE("config file then flag overrides, echoed in full") {
  TempDir dir("cfg");
  REQUIRE(run({"make-fixtures", "--task", "copy", "--size", "6", "--eval-size", "2", "--out", dir.file("fx")}).code == 0);
  write_text(dir.file("c.cfg"), "hops = 1\nlambda_mar = 0.25\n");
  const auto r = run(with({"train", "--config", dir.file("c.cfg"), "--hops", "3", "--train", dir.file("fx/train.jsonl"),
                           "--dev", dir.file("fx/dev.jsonl"), "--out", dir.file("run")},
                          kTinyModel));
  REQUIRE(r.code == 0);
  CHECK(r.err.find("hops = 3\n") != std::string::npos);
  CHECK(r.err.find("lambda_mar = 0.25\n") != std::string::npos);
  CHECK(r.err.find("max_answer_len = 50\n") != std::string::npos);
  CHECK(r.out.find("epoch 2 [nll+cov]") != std::string::npos);
  for (const char* f : {"/best.ckpt", "/last.ckpt", "/epoch-1.ckpt", "/vocab.txt", "/train.log.jsonl"}) {
    CHECK(std::filesystem::exists(dir.file("run") + f));
  }
}

TEST_CASE("train, generate, trace and evaluate wire together and are idempotent") {
  TempDir dir("pipe");
  REQUIRE(run({"make-fixtures", "--task", "copy", "--size", "6", "--eval-size", "3", "--out", dir.file("fx")}).code == 0);
  for (const char* name : {"r1", "r2"}) {
    REQUIRE(run(with({"train", "--train", dir.file("fx/train.jsonl"), "--out", dir.file(name)}, kTinyModel)).code == 0);
  }
  CHECK(read_text(dir.file("r1/last.ckpt")) == read_text(dir.file("r2/last.ckpt")));
  CHECK(read_text(dir.file("r1/train.log.jsonl")) == read_text(dir.file("r2/train.log.jsonl")));

  const auto g = run({"generate", "--checkpoint", dir.file("r1/last.ckpt"), "--vocab", dir.file("r1/vocab.txt"), "--data",
                      dir.file("fx/test.jsonl"), "--out", dir.file("gen.jsonl"), "--beam_size", "2", "--max_answer_len", "5"});
  REQUIRE(g.code == 0);
  CHECK(g.err.find("beam_size = 2\n") != std::string::npos);
  CHECK(g.err.find("emb_dim = 4\n") != std::string::npos);  // from the checkpoint
  const auto gen = read_text(dir.file("gen.jsonl"));
  CHECK(std::count(gen.begin(), gen.end(), '\n') == 3);
  CHECK(gen.find("\"justification\"") != std::string::npos);

  const auto t = run({"trace-hops", "--checkpoint", dir.file("r1/last.ckpt"), "--vocab", dir.file("r1/vocab.txt"), "--data",
                      dir.file("fx/test.jsonl")});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("\"normalized_weight\"") != std::string::npos);
  CHECK(t.out.find("\"hop\":3") != std::string::npos);

  const auto e = run({"evaluate", "--generated", dir.file("gen.jsonl"), "--references", dir.file("fx/test.jsonl"), "--baselines"});
  REQUIRE(e.code == 0);
  for (const char* key : {"[system msg]", "[system lead3]", "[system mmr]", "rouge_1 =", "rouge_2 =", "rouge_l =",
                          "duplication_1 =", "duplication_4 ="}) {
    CHECK(e.out.find(key) != std::string::npos);
  }
}

TEST_CASE("evaluate scores a perfect system as 1") {
  TempDir dir("eval");
  REQUIRE(run({"make-fixtures", "--task", "repeat", "--size", "1", "--eval-size", "4", "--out", dir.file("fx")}).code == 0);
  std::string gen;
  for (const auto& ex : load_dataset(dir.file("fx/test.jsonl"), Split::kTest)) {
    gen += "{\"id\":\"" + ex.id + "\",\"answer\":\"" + ex.answer + "\"}\n";
  }
  write_text(dir.file("gen.jsonl"), gen);
  const auto e = run({"evaluate", "--generated", dir.file("gen.jsonl"), "--references", dir.file("fx/test.jsonl"), "--out",
                      dir.file("report.txt")});
  REQUIRE(e.code == 0);
  const auto report = read_text(dir.file("report.txt"));
  CHECK(report.find("rouge_l = P 1.0000 R 1.0000 F1 1.0000") != std::string::npos);

  write_text(dir.file("partial.jsonl"), gen.substr(0, gen.find('\n') + 1));
  CHECK(run({"evaluate", "--generated", dir.file("partial.jsonl"), "--references", dir.file("fx/test.jsonl")}).code ==
        cli::kData);
}

TEST_CASE("errors map to categorized exit codes") {
  TempDir dir("err");
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"build-vocab", "--train", "x", "--out", "y", "--no_such_key", "1"}).code == cli::kUsage);
  CHECK(run({"build-vocab", "--train", dir.file("missing.jsonl"), "--out", dir.file("v.txt")}).code == cli::kData);
  CHECK(run({"build-vocab", "--train", "x", "--out", "y", "--hops", "zero"}).code == cli::kConfig);
  CHECK(run({"build-vocab", "--train", "x", "--out", "y", "--dropout", "1.5"}).code == cli::kConfig);
  CHECK(run({"make-fixtures", "--task", "nope", "--out", dir.file("f")}).code == cli::kConfig);
  CHECK(run({"generate", "--checkpoint", dir.file("none.ckpt"), "--vocab", "v", "--data", "d"}).code == cli::kData);
  CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("relative paths resolve under the data root") {
  TempDir dir("root");
  ::setenv("MSG_DATA_ROOT", dir.path().c_str(), 1);
  CHECK(cli::resolve_path("fx/train.jsonl") == dir.file("fx/train.jsonl"));
  CHECK(cli::resolve_path("/abs/x") == "/abs/x");
  const auto r = run({"make-fixtures", "--task", "copy", "--size", "2", "--eval-size", "1", "--out", "fx"});
  ::unsetenv("MSG_DATA_ROOT");
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir.file("fx/train.jsonl")));
  CHECK(cli::resolve_path("fx") == "fx");
}
