#include <omp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "criteria.hpp"
#include "model_fixture.hpp"
#include "msg/error.hpp"
#include "msg/fixtures.hpp"
#include "msg/inference.hpp"
#include "msg/metrics.hpp"
#include "msg/training.hpp"
#include "test_util.hpp"

namespace msg::acceptance {

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

double median3(std::array<double, 3> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

// Sizes shared by the fixture runs; everything else keeps its default.
Config fixture_config() {
  Config c;
  c.emb_dim = 32;
  c.enc_hidden = 32;
  c.dec_hidden = 32;
  c.attn_dim = 32;
  return c;
}

struct RunResult {
  TrainResult train;
  SystemReport report;
};

// Trains on train_set (dev_set picks best.ckpt), then decodes eval_set with
// the best-by-dev parameters (or the final ones when dev_set is empty).
RunResult train_and_score(const Config& cfg, const fixtures::FixtureSet& fx, bool eval_on_train) {
  const auto train_set = tokenize_all(fx.train);
  const auto dev_set = tokenize_all(fx.dev);
  const auto eval_set = eval_on_train ? train_set : tokenize_all(fx.test);
  const Vocabulary vocab = build_vocab(train_set, cfg.vocab_size);
  test::TempDir dir("accept");
  ParamStore<float> store;
  const ModelParams mp = create_model_params(store, cfg, vocab.size());
  TrainOptions opt;
  opt.checkpoint_dir = dir.path().string();
  RunResult r;
  r.train = train(cfg, train_set, dev_set, vocab, store, mp, opt);
  if (!dev_set.empty()) store = load_checkpoint<float>(dir.file("best.ckpt"));

  std::vector<std::string> ids;
  std::vector<Tokens> cand, ref;
  const Batch batch = make_batch(eval_set, vocab, cfg.limits());
  std::vector<Generation> gens(static_cast<std::size_t>(batch.size));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < batch.size; ++i) gens[static_cast<std::size_t>(i)] = generate(store, mp, cfg, vocab, batch.view(i), cfg.beam_size);
  for (int i = 0; i < batch.size; ++i) {
    ids.push_back(eval_set[static_cast<std::size_t>(i)].id);
    cand.push_back(gens[static_cast<std::size_t>(i)].words);
    ref.push_back(eval_set[static_cast<std::size_t>(i)].answer);
  }
  r.report = score_system("msg", ids, cand, ref);
  return r;
}

Outcome overfit_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg = fixture_config();
  cfg.hops = 1;
  cfg.batch_size = 8;
  cfg.init_range = 0.1;
  cfg.phase1_epochs = 280;
  cfg.phase2_epochs = 20;
  const auto fx = fixtures::make_fixture(fixtures::Task::kCopy, 64, 0, 7);
  const auto r = train_and_score(cfg, fx, true);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rl = r.report.mean.rl.f;
  return {rl >= 0.95 && secs < 900 && r.train.epochs.size() <= 300,
          "ROUGE-L F1 " + fixed(rl) + " (>= 0.95) after " + std::to_string(r.train.epochs.size()) + " epochs, " +
              fixed(secs / 60, 1) + " min (< 15 min)"};
}

// Paired 1-hop / 3-hop runs per seed; parameters are picked by dev NLL.
Outcome multihop_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg = fixture_config();
  cfg.batch_size = 4;
  cfg.init_range = 0.2;
  cfg.phase1_epochs = 100;
  cfg.phase2_epochs = 0;
  const auto fx = fixtures::make_fixture(fixtures::Task::kMultihop, 512, 64, 7);
  std::array<double, 3> one{}, three{};
  for (int s = 0; s < 3; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s + 1);
    cfg.hops = 1;
    one[static_cast<std::size_t>(s)] = train_and_score(cfg, fx, false).report.mean.rl.f;
    cfg.hops = 3;
    three[static_cast<std::size_t>(s)] = train_and_score(cfg, fx, false).report.mean.rl.f;
  }
  const double a = median3(one), b = median3(three);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string runs;
  for (std::size_t s = 0; s < 3; ++s) runs += (s ? ", " : "") + fixed(one[s]) + "/" + fixed(three[s]);
  return {b - a >= 0.02, "median ROUGE-L F1 1-hop " + fixed(a) + ", 3-hop " + fixed(b) + ", gain " +
                             fixed(100 * (b - a), 2) + " points (>= 2); per seed " + runs + "; " +
                             fixed(secs / 60, 1) + " min"};
}

// Same seed for both arms, so phase 1 is identical and only phase 2 differs.
Outcome mvc_effect() {
  Config cfg = fixture_config();
  cfg.batch_size = 4;
  cfg.init_range = 0.1;
  cfg.phase1_epochs = 40;
  cfg.phase2_epochs = 30;
  cfg.lambda_cov = 1.0;
  auto fx = fixtures::make_fixture(fixtures::Task::kRepeat, 128, 64, 7);
  fx.dev.clear();  // score the final phase-2 parameters
  std::array<std::array<double, 3>, 4> with{}, without{};
  for (int s = 0; s < 3; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s + 1);
    for (bool mvc : {true, false}) {
      cfg.mvc = mvc;
      const auto dup = train_and_score(cfg, fx, false).report.duplication.ratio;
      for (int n = 0; n < 4; ++n) (mvc ? with : without)[static_cast<std::size_t>(n)][static_cast<std::size_t>(s)] = dup[static_cast<std::size_t>(n)];
    }
  }
  bool ok = true;
  std::string detail = "median duplication with/without MVC:";
  for (std::size_t n = 0; n < 4; ++n) {
    const double a = median3(with[n]), b = median3(without[n]);
    ok = ok && a <= b;
    detail += " n=" + std::to_string(n + 1) + " " + fixed(a, 3) + "/" + fixed(b, 3);
  }
  return {ok, detail};
}

// Micro-fixture training run returning the per-batch total-loss trajectory.
std::vector<double> micro_trajectory(const Config& cfg) {
  auto m = test::tiny_model<float>(cfg);
  const auto examples = test::tiny_examples();
  const auto res = train(cfg, examples, examples, m.vocab, m.store, m.mp);
  const Batch b = make_batch(examples, m.vocab, cfg.limits());
  for (int i = 0; i < b.size; ++i) {
    const auto g = generate(m.store, m.mp, cfg, m.vocab, b.view(i), 2);
    if (g.trace.weights.size() != static_cast<std::size_t>(cfg.hops)) throw Error("trace has the wrong hop count");
  }
  std::vector<double> out;
  for (const auto& l : res.batches) out.push_back(l.total);
  return out;
}

Outcome ablation_plumbing() {
  Config base = test::tiny_config();
  base.dropout = 0.5;
  base.phase1_epochs = 3;
  base.phase2_epochs = 3;
  base.seed = 17;
  const auto reference = micro_trajectory(base);
  struct Toggle {
    const char* name;
    void (*apply)(Config&);
  };
  const Toggle toggles[] = {
      {"hops=1", [](Config& c) { c.hops = 1; }},
      {"hops=2", [](Config& c) { c.hops = 2; }},
      {"mar_unit=off", [](Config& c) { c.mar_unit = false; }},
      {"aggregation=last", [](Config& c) { c.aggregation = Aggregation::kLast; }},
      {"aggregation=uniform", [](Config& c) { c.aggregation = Aggregation::kUniform; }},
      {"gate=softmax", [](Config& c) { c.gate = GateMode::kSoftmax; }},
      {"question_pointer=off", [](Config& c) { c.question_pointer = false; }},
      {"mvc=off", [](Config& c) { c.mvc = false; }},
  };
  std::string unchanged;
  int ok = 0;
  for (const auto& t : toggles) {
    Config c = base;
    t.apply(c);
    const auto traj = micro_trajectory(c);
    double diff = 0;
    for (std::size_t i = 0; i < std::min(traj.size(), reference.size()); ++i) diff = std::max(diff, std::abs(traj[i] - reference[i]));
    if (traj.size() == reference.size() && diff > 0) {
      ++ok;
    } else {
      unchanged += std::string(unchanged.empty() ? "" : ", ") + t.name;
    }
  }
  return {unchanged.empty(), std::to_string(ok) + "/8 toggles ran end-to-end and moved the loss trajectory" +
                                 (unchanged.empty() ? "" : "; unchanged: " + unchanged)};
}

Outcome determinism() {
  Config cfg = test::tiny_config();
  cfg.emb_dim = 8;
  cfg.enc_hidden = 8;
  cfg.dec_hidden = 8;
  cfg.attn_dim = 8;
  cfg.batch_size = 4;
  cfg.grad_slots = 4;
  cfg.dropout = 0.5;
  cfg.phase1_epochs = 4;
  cfg.phase2_epochs = 0;
  cfg.seed = 5;
  const auto train_set = tokenize_all(fixtures::make_fixture(fixtures::Task::kCopy, 16, 0, 3).train);
  const Vocabulary vocab = build_vocab(train_set, cfg.vocab_size);
  auto run = [&](int threads) {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    ParamStore<float> store;
    const ModelParams mp = create_model_params(store, cfg, vocab.size());
    auto res = train(cfg, train_set, {}, vocab, store, mp);
    omp_set_num_threads(saved);
    return res.batches;
  };
  const auto a = run(1);
  const auto b = run(1);
  const auto c = run(3);
  auto same = [](const std::vector<BatchLog>& x, const std::vector<BatchLog>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].nll != y[i].nll || x[i].total != y[i].total || x[i].epoch != y[i].epoch) return false;
    }
    return true;
  };
  const bool moved = a.front().nll != a.back().nll;
  return {same(a, b) && same(a, c) && moved, std::to_string(a.size()) + " phase-1 batch losses; identical across runs: " +
                                                 (same(a, b) ? "yes" : "no") + ", with 3 threads: " +
                                                 (same(a, c) ? "yes" : "no")};
}

}  // namespace

std::vector<Criterion> training_criteria() {
  return {{4, "overfit sanity", overfit_sanity},
          {5, "multi-hop trend", multihop_trend},
          {6, "MVC effect", mvc_effect},
          {8, "ablation plumbing", ablation_plumbing},
          {9, "determinism", determinism}};
}

}  // namespace msg::acceptance
