#include "msg/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <ostream>

#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/error.hpp"
#include "msg/fixtures.hpp"
#include "msg/inference.hpp"
#include "msg/metrics.hpp"
#include "msg/model_params.hpp"
#include "msg/training.hpp"

namespace msg::cli {

namespace fs = std::filesystem;

std::string resolve_path(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* root = std::getenv("MSG_DATA_ROOT");
  if (root == nullptr || *root == '\0') return path;
  return (fs::path(root) / path).string();
}

namespace {

// Config flags shared by every subcommand: --config FILE plus one --key per field.
class ConfigFlags {
 public:
  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path_, "config file (key = value lines)");
    for (const auto& f : config_fields()) {
      options_.push_back(sub->add_option("--" + f.key, values_[f.key], f.help));
    }
  }

  // base, then the config file, then explicit flags.
  Config resolve(Config base = {}) const {
    if (!config_path_.empty()) base = load_config(resolve_path(config_path_));
    for (std::size_t i = 0; i < options_.size(); ++i) {
      if (options_[i]->count() == 0) continue;
      const auto& key = config_fields()[i].key;
      set_config_value(base, key, values_.at(key));
    }
    base.validate();
    return base;
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::vector<CLI::Option*> options_;
};

void echo_config(std::ostream& err, const Config& cfg) { err << "# resolved config\n" << format_config(cfg) << "# end config\n"; }

std::ofstream open_out(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  return f;
}

std::vector<TokenizedExample> load_tokenized(const std::string& path, Split split, std::ostream& err) {
  LoadReport rep;
  auto raw = load_dataset(resolve_path(path), split, &rep);
  if (rep.malformed > 0) err << "skipped " << rep.malformed << " malformed line(s) of " << rep.lines << " in " << path << "\n";
  return tokenize_all(raw);
}

struct LoadedModel {
  Config cfg;
  Vocabulary vocab;
  ParamStore<float> store;
  ModelParams mp;
};

LoadedModel load_model(const std::string& checkpoint, const std::string& vocab_path, const ConfigFlags& flags) {
  LoadedModel m;
  CheckpointMeta meta;
  m.store = load_checkpoint<float>(resolve_path(checkpoint), &meta);
  const auto it = meta.entries.find("config");
  m.cfg = flags.resolve(it != meta.entries.end() ? parse_config(it->second) : Config{});
  m.vocab = Vocabulary::load(resolve_path(vocab_path));
  m.mp = bind_model_params(m.store, m.cfg);
  if (m.mp.vocab_size != m.vocab.size()) {
    throw DataError("vocabulary has " + std::to_string(m.vocab.size()) + " entries but the checkpoint expects " +
                    std::to_string(m.mp.vocab_size));
  }
  return m;
}

std::vector<ExampleView> views(const std::vector<TokenizedExample>& examples, const Vocabulary& vocab, const Config& cfg) {
  std::vector<ExampleView> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(make_batch({ex}, vocab, cfg.limits()).view(0));
  return out;
}

// --- subcommands ------------------------------------------------------------

struct FixtureArgs {
  std::string task;
  int size = 64;
  int eval_size = 64;
  std::string out;
};

void cmd_make_fixtures(const FixtureArgs& a, const Config& cfg, std::ostream& out) {
  const auto set = fixtures::make_fixture(fixtures::parse_task(a.task), a.size, a.eval_size, cfg.seed);
  const fs::path dir = resolve_path(a.out);
  fs::create_directories(dir);
  for (const auto& [name, part] : {std::pair{"train", &set.train}, {"dev", &set.dev}, {"test", &set.test}}) {
    const auto path = (dir / (std::string(name) + ".jsonl")).string();
    save_dataset(path, *part);
    out << "wrote " << part->size() << " examples to " << path << "\n";
  }
}

struct VocabArgs {
  std::string train;
  std::string out;
};

void cmd_build_vocab(const VocabArgs& a, const Config& cfg, std::ostream& out, std::ostream& err) {
  const auto examples = load_tokenized(a.train, Split::kTrain, err);
  const auto vocab = build_vocab(examples, cfg.vocab_size);
  vocab.save(resolve_path(a.out));
  out << "vocabulary: " << vocab.size() << " entries, token coverage " << vocab.coverage() << "\n";
}

struct TrainArgs {
  std::string train;
  std::string dev;
  std::string vocab;
  std::string embeddings;
  std::string out;
  std::string resume;
};

void cmd_train(const TrainArgs& a, const Config& cfg, std::ostream& out, std::ostream& err) {
  const auto train_set = load_tokenized(a.train, Split::kTrain, err);
  const auto dev_set = a.dev.empty() ? std::vector<TokenizedExample>{} : load_tokenized(a.dev, Split::kDev, err);
  const fs::path dir = resolve_path(a.out);
  fs::create_directories(dir);
  const Vocabulary vocab = a.vocab.empty() ? build_vocab(train_set, cfg.vocab_size) : Vocabulary::load(resolve_path(a.vocab));
  vocab.save((dir / "vocab.txt").string());

  ParamStore<float> store;
  const ModelParams mp = create_model_params(store, cfg, vocab.size());
  if (!a.embeddings.empty()) {
    EmbeddingReport rep;
    const auto table = load_embeddings(resolve_path(a.embeddings), vocab, cfg.emb_dim, cfg.init_range, cfg.seed, &rep);
    auto& emb = store[mp.embedding];
    std::copy(table.begin(), table.end(), emb.value.begin());
    err << "embeddings: " << rep.matched << " of " << vocab.size() << " tokens found, " << rep.bad_lines
        << " bad line(s)\n";
  }

  TrainOptions opt;
  opt.checkpoint_dir = dir.string();
  opt.log_path = (dir / "train.log.jsonl").string();
  opt.resume_from = resolve_path(a.resume);
  opt.on_epoch = [&out](const EpochSummary& e) {
    out << "epoch " << e.epoch << (e.cov_on ? " [nll+cov]" : " [nll]") << " train_nll " << e.train.nll << " train_cov "
        << e.train.cov << " dev_nll " << e.dev_nll << " grad_norm " << e.grad_norm << "\n";
    out.flush();
  };
  const auto res = train(cfg, train_set, dev_set, vocab, store, mp, opt);
  out << "done: " << res.epochs.size() << " epoch(s), best dev nll " << res.best_dev << " at epoch " << res.best_epoch
      << ", gate fallbacks " << res.gate_fallbacks << "\n";
}

struct ModelArgs {
  std::string checkpoint;
  std::string vocab;
  std::string data;
  std::string out;
};

void cmd_generate(const ModelArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  auto m = load_model(a.checkpoint, a.vocab, flags);
  echo_config(err, m.cfg);
  const auto examples = load_tokenized(a.data, Split::kTest, err);
  const auto vs = views(examples, m.vocab, m.cfg);
  std::vector<std::string> lines(vs.size());
  long fallbacks = 0;
  const int n = static_cast<int>(vs.size());
#pragma omp parallel for schedule(dynamic, 1) reduction(+ : fallbacks)
  for (int i = 0; i < n; ++i) {
    const auto g = generate(m.store, m.mp, m.cfg, m.vocab, vs[static_cast<std::size_t>(i)], m.cfg.beam_size);
    lines[static_cast<std::size_t>(i)] = generation_record(g);
    fallbacks += g.gate_fallbacks;
  }
  if (a.out.empty()) {
    for (const auto& l : lines) out << l << "\n";
  } else {
    auto f = open_out(resolve_path(a.out));
    for (const auto& l : lines) f << l << "\n";
    out << "wrote " << lines.size() << " answers to " << resolve_path(a.out) << "\n";
  }
  if (fallbacks > 0) err << "sentence gate fallback used at " << fallbacks << " step(s)\n";
}

void cmd_trace_hops(const ModelArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  auto m = load_model(a.checkpoint, a.vocab, flags);
  echo_config(err, m.cfg);
  const auto examples = load_tokenized(a.data, Split::kTest, err);
  std::ofstream file;
  if (!a.out.empty()) file = open_out(resolve_path(a.out));
  std::ostream& sink = a.out.empty() ? out : file;
  for (const auto& v : views(examples, m.vocab, m.cfg)) {
    for (const auto& line : trace_records(v.id, trace_hops(m.store, m.mp, m.cfg, v))) sink << line << "\n";
  }
}

struct EvalArgs {
  std::string generated;
  std::string references;
  std::string out;
  bool baselines = false;
  bool per_example = true;
  int mmr_k = 3;
  double mmr_lambda = 0.7;
};

std::map<std::string, std::string> load_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read generations '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("answer").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const auto gens = load_generations(resolve_path(a.generated));
  const auto refs = load_dataset(resolve_path(a.references), Split::kTrain);
  std::vector<std::string> ids;
  std::vector<Tokens> system, references, lead, mmr;
  for (const auto& r : refs) {
    const auto it = gens.find(r.id);
    if (it == gens.end()) throw DataError("no generated answer for example '" + r.id + "'");
    const auto t = tokenize_example(r);
    ids.push_back(r.id);
    system.push_back(tokenize(it->second));
    references.push_back(t.answer);
    if (a.baselines) {
      Tokens l;
      for (const auto& s : lead3(r.sentences)) {
        const auto w = tokenize(s);
        l.insert(l.end(), w.begin(), w.end());
      }
      lead.push_back(std::move(l));
      auto picked = mmr_extract(t.question, t.sentences, a.mmr_lambda, a.mmr_k);
      std::sort(picked.begin(), picked.end());  // document order
      Tokens m;
      for (int i : picked) m.insert(m.end(), t.sentences[static_cast<std::size_t>(i)].begin(), t.sentences[static_cast<std::size_t>(i)].end());
      mmr.push_back(std::move(m));
    }
  }
  std::vector<SystemReport> reports{score_system("msg", ids, system, references)};
  if (a.baselines) {
    reports.push_back(score_system("lead3", ids, lead, references));
    reports.push_back(score_system("mmr", ids, mmr, references));
  }
  const auto text = format_report(reports, a.per_example);
  if (a.out.empty()) {
    out << text;
  } else {
    open_out(resolve_path(a.out)) << text;
    out << "wrote report to " << resolve_path(a.out) << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Question-driven abstractive summarizer with multi-hop sentence selection", "msg"};
  app.require_subcommand(1);

  FixtureArgs fx;
  VocabArgs va;
  TrainArgs ta;
  ModelArgs ga, ha;
  EvalArgs ea;
  std::map<CLI::App*, ConfigFlags> flags;

  auto* make_fixtures = app.add_subcommand("make-fixtures", "write synthetic train/dev/test corpora");
  make_fixtures->add_option("--task", fx.task, "copy, multihop or repeat")->required();
  make_fixtures->add_option("--size", fx.size, "training examples")->check(CLI::PositiveNumber);
  make_fixtures->add_option("--eval-size", fx.eval_size, "dev and test examples each")->check(CLI::NonNegativeNumber);
  make_fixtures->add_option("--out", fx.out, "output directory")->required();

  auto* build_vocab_cmd = app.add_subcommand("build-vocab", "build a vocabulary from a training file");
  build_vocab_cmd->add_option("--train", va.train, "training JSONL")->required();
  build_vocab_cmd->add_option("--out", va.out, "vocabulary file")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model (checkpoints, log and vocabulary go to --out)");
  train_cmd->add_option("--train", ta.train, "training JSONL")->required();
  train_cmd->add_option("--dev", ta.dev, "development JSONL");
  train_cmd->add_option("--vocab", ta.vocab, "existing vocabulary (built from --train otherwise)");
  train_cmd->add_option("--embeddings", ta.embeddings, "pretrained embeddings, word-per-line text");
  train_cmd->add_option("--out", ta.out, "run directory")->required();
  train_cmd->add_option("--resume", ta.resume, "checkpoint to resume from");

  auto* generate_cmd = app.add_subcommand("generate", "decode answers as JSONL");
  auto* trace_cmd = app.add_subcommand("trace-hops", "export per-hop sentence weights as JSONL");
  for (auto [sub, a] : {std::pair{generate_cmd, &ga}, {trace_cmd, &ha}}) {
    sub->add_option("--checkpoint", a->checkpoint, "model checkpoint")->required();
    sub->add_option("--vocab", a->vocab, "vocabulary file")->required();
    sub->add_option("--data", a->data, "input JSONL")->required();
    sub->add_option("--out", a->out, "output JSONL (stdout otherwise)");
  }

  auto* evaluate_cmd = app.add_subcommand("evaluate", "score generated answers against references");
  evaluate_cmd->add_option("--generated", ea.generated, "JSONL with id and answer")->required();
  evaluate_cmd->add_option("--references", ea.references, "dataset JSONL")->required();
  evaluate_cmd->add_option("--out", ea.out, "report file (stdout otherwise)");
  evaluate_cmd->add_flag("--baselines", ea.baselines, "also score LEAD3 and MMR");
  evaluate_cmd->add_flag("!--no-per-example", ea.per_example, "omit per-example rows");
  evaluate_cmd->add_option("--mmr-k", ea.mmr_k, "sentences selected by MMR")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--mmr-lambda", ea.mmr_lambda, "MMR relevance weight")->check(CLI::Range(0.0, 1.0));

  for (auto* sub : {make_fixtures, build_vocab_cmd, train_cmd, generate_cmd, trace_cmd, evaluate_cmd}) flags[sub].attach(sub);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == generate_cmd) {
      cmd_generate(ga, flags[sub], out, err);
    } else if (sub == trace_cmd) {
      cmd_trace_hops(ha, flags[sub], out, err);
    } else {
      const Config cfg = flags[sub].resolve();
      echo_config(err, cfg);
      if (sub == make_fixtures) cmd_make_fixtures(fx, cfg, out);
      if (sub == build_vocab_cmd) cmd_build_vocab(va, cfg, out, err);
      if (sub == train_cmd) cmd_train(ta, cfg, out, err);
      if (sub == evaluate_cmd) cmd_evaluate(ea, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "model error: " << e.what() << "\n";
    return kModel;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kOk;
}

}  // namespace msg::cli
