#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "model_fixture.hpp"
#include "msg/inference.hpp"
#include "msg/model.hpp"
#include "msg/training.hpp"

using namespace msg;

namespace {

// Plain argmax decoding written against decoder_step directly.
std::vector<int> reference_greedy(const ParamStore<float>& store, const ModelParams& mp, const Config& cfg,
                                  const ExampleView& ex) {
  ad::Graph<float> g(&store, nullptr);
  const auto src = encode_source(g, mp, cfg, ex);
  auto st = src.init;
  std::vector<int> out;
  int prev = kSos;
  while (static_cast<int>(out.size()) < cfg.max_answer_len) {
    auto [step, next] = decoder_step(g, mp, cfg, src.mem, st, prev);
    const auto p = step.p_final.value();
    const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (best == kEos) break;
    out.push_back(best);
    prev = best;
    st = next;
  }
  return out;
}

void fill(ParamStore<float>& s, int index, float v) { std::fill(s[index].value.begin(), s[index].value.end(), v); }

// Hand-built parameters that copy a single-sentence document word by word:
// the forward encoder counts positions, coverage blocks visited words and the
// pointer always picks the document view.
void make_copier(ParamStore<float>& s, const ModelParams& mp, const Config& cfg) {
  for (int i = 0; i < s.size(); ++i) fill(s, i, 0.f);
  const int h = cfg.enc_hidden;
  auto& fb = s[mp.enc_fw.bias].value;
  for (int j = 0; j < h; ++j) {
    fb[static_cast<std::size_t>(j)] = 6.f;          // input gate open
    fb[static_cast<std::size_t>(h + j)] = 6.f;      // keep memory
    fb[static_cast<std::size_t>(2 * h + j)] = 0.02f;  // constant increment
    fb[static_cast<std::size_t>(3 * h + j)] = 6.f;  // output gate open
  }
  auto& wd = s[mp.attn_d.w_key].value;  // d_h x attn
  wd[0] = -1.f;                         // fw unit 0 -> attn dim 0: earlier words score higher
  s[mp.attn_d.w_cov].value[1] = -10.f;  // coverage -> attn dim 1
  s[mp.attn_d.omega].value[0] = 5000.f;
  s[mp.attn_d.omega].value[1] = 1e5f;
  s[mp.ptr_b].value = {-60.f, -60.f, 60.f};
}

}  // namespace

TEST_CASE("beam size one matches argmax decoding") {
  auto cfg = test::tiny_config();
  cfg.max_answer_len = 12;
  const auto vocab = test::tiny_vocab();
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    cfg.seed = seed;
    ParamStore<float> store;
    const ModelParams mp = create_model_params(store, cfg, vocab.size());
    for (int which = 0; which < 2; ++which) {
      const ExampleView ex = test::tiny_view(vocab, which);
      const Generation g = generate(store, mp, cfg, vocab, ex, 1);
      CHECK(g.tokens == reference_greedy(store, mp, cfg, ex));
    }
  }
}

TEST_CASE("hand-built copier reproduces the document") {
  auto cfg = test::tiny_config();
  cfg.attn_dim = 2;
  const Vocabulary vocab = test::tiny_vocab();
  ParamStore<float> store;
  const ModelParams mp = create_model_params(store, cfg, vocab.size());
  make_copier(store, mp, cfg);
  SUBCASE("with out-of-vocabulary words") {
    cfg.max_answer_len = 6;
    auto raw = tokenize_example(RawExample{"c", "dogs bark", {"the quokka eats fish near okapis"}, ""});
    const ExampleView ex = make_batch({raw}, vocab, {}).view(0);
    REQUIRE(ex.oov.size() >= 2);
    for (int beam : {1, 4}) {
      const Generation g = generate(store, mp, cfg, vocab, ex, beam);
      CHECK(g.answer == "the quokka eats fish near okapis");
    }
  }
  SUBCASE("cut at the length cap") {
    std::string doc;
    for (int i = 0; i < 60; ++i) doc += "w" + std::to_string(i) + " ";
    auto raw = tokenize_example(RawExample{"long", "dogs bark", {doc}, ""});
    BatchLimits limits;
    limits.sentence_len = 60;
    const ExampleView ex = make_batch({raw}, vocab, limits).view(0);
    const Generation g = generate(store, mp, cfg, vocab, ex, 1);
    REQUIRE(g.tokens.size() == 50);
    CHECK(g.words.front() == "w0");
    CHECK(g.words.back() == "w49");
  }
}

TEST_CASE("beam bookkeeping") {
  auto cfg = test::tiny_config();
  cfg.max_answer_len = 8;
  const auto vocab = test::tiny_vocab();
  ParamStore<float> store;
  const ModelParams mp = create_model_params(store, cfg, vocab.size());
  for (int which = 0; which < 2; ++which) {
    const ExampleView ex = test::tiny_view(vocab, which);
    const Generation g = generate(store, mp, cfg, vocab, ex, 4);
    double total = 0;
    double prev = 0;
    for (double lp : g.best.step_log_probs) {
      total += lp;
      CHECK(total <= prev);
      prev = total;
    }
    CHECK(std::abs(total - g.best.log_prob) < 1e-6);
    CHECK(g.best.finished);
    CHECK(static_cast<int>(g.tokens.size()) <= cfg.max_answer_len);
    for (int t : g.tokens) CHECK(t < ex.extended_size());
  }
}

TEST_CASE("hop traces") {
  auto cfg = test::tiny_config();
  const auto vocab = test::tiny_vocab();
  const ExampleView ex = test::tiny_view(vocab, 0);
  SUBCASE("one hop has one row per sentence") {
    cfg.hops = 1;
    ParamStore<float> store;
    const ModelParams mp = create_model_params(store, cfg, vocab.size());
    const HopTrace tr = trace_hops(store, mp, cfg, ex);
    CHECK(trace_records(ex.id, tr).size() == static_cast<std::size_t>(ex.num_sentences));
  }
  SUBCASE("weights sum to one and reruns agree") {
    ParamStore<float> store;
    const ModelParams mp = create_model_params(store, cfg, vocab.size());
    const HopTrace a = trace_hops(store, mp, cfg, ex);
    const HopTrace b = trace_hops(store, mp, cfg, ex);
    CHECK(a.weights == b.weights);
    REQUIRE(a.weights.size() == 3);
    for (const auto& w : a.weights) {
      double s = 0;
      for (double x : w) s += x;
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
    const auto rec = nlohmann::json::parse(trace_records(ex.id, a)[0]);
    CHECK(rec["example_id"] == ex.id);
    CHECK(rec["hop"] == 1);
    CHECK(rec["sentence_index"] == 0);
  }
}

TEST_CASE("top_sentences") {
  CHECK(top_sentences({0.1, 0.5, 0.2, 0.5}, 3) == std::vector<int>{1, 3, 2});
  CHECK(top_sentences({0.7}, 3) == std::vector<int>{0});
}
