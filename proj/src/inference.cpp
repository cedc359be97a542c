#include "msg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "msg/error.hpp"
#include "msg/model.hpp"

namespace msg {

namespace {

template <class T>
struct Live {
  Hypothesis hyp;
  DecoderState<T> state;
};

struct Candidate {
  int parent = 0;
  int token = 0;
  double log_prob = 0.0;
  double step = 0.0;
};

}  // namespace

std::vector<int> top_sentences(const std::vector<double>& weights, int k) {
  std::vector<int> idx(weights.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return weights[static_cast<std::size_t>(a)] > weights[static_cast<std::size_t>(b)];
  });
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
  return idx;
}

template <class T>
Generation generate(const ParamStore<T>& store, const ModelParams& mp, const Config& cfg, const Vocabulary& vocab,
                    const ExampleView& ex, int beam_size) {
  if (beam_size < 1) throw ConfigError("beam size must be at least 1");
  ad::Graph<T> g(&store, nullptr);
  const SourceEncoding<T> src = encode_source(g, mp, cfg, ex);
  Generation out;
  out.id = ex.id;
  out.trace = make_trace(src.hops, src.enc.sentence_mask);
  for (const auto& w : out.trace.weights) out.justification.push_back(top_sentences(w, 3));

  const int cap = cfg.max_answer_len;
  StepOptions so;
  so.record_coverage = false;
  so.gate_fallbacks = &out.gate_fallbacks;
  std::vector<Live<T>> live{{Hypothesis{}, src.init}};
  std::vector<Hypothesis> done;

  while (!live.empty() && static_cast<int>(done.size()) < beam_size) {
    std::vector<Candidate> pool;
    std::vector<DecoderState<T>> next_states;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& l = live[h];
      const int prev = l.hyp.tokens.empty() ? kSos : l.hyp.tokens.back();
      auto [step, next] = decoder_step(g, mp, cfg, src.mem, l.state, prev, so);
      next_states.push_back(std::move(next));
      const auto p = step.p_final.value();
      std::vector<int> ids(p.size());
      std::iota(ids.begin(), ids.end(), 0);
      const auto keep = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(beam_size));
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), [&](int a, int b) {
        const auto pa = p[static_cast<std::size_t>(a)];
        const auto pb = p[static_cast<std::size_t>(b)];
        return pa > pb || (pa == pb && a < b);
      });
      for (std::size_t i = 0; i < keep; ++i) {
        const int tok = ids[i];
        const double lp = std::log(std::max(static_cast<double>(p[static_cast<std::size_t>(tok)]), 1e-300));
        pool.push_back({static_cast<int>(h), tok, l.hyp.log_prob + lp, lp});
      }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });
    std::vector<Live<T>> survivors;
    for (const auto& c : pool) {
      if (static_cast<int>(survivors.size() + done.size()) >= beam_size) break;
      Live<T> n{live[static_cast<std::size_t>(c.parent)].hyp, next_states[static_cast<std::size_t>(c.parent)]};
      n.hyp.tokens.push_back(c.token);
      n.hyp.step_log_probs.push_back(c.step);
      n.hyp.log_prob = c.log_prob;
      const int content = static_cast<int>(n.hyp.tokens.size()) - (c.token == kEos ? 1 : 0);
      n.hyp.finished = c.token == kEos || content >= cap;
      if (n.hyp.finished) {
        done.push_back(std::move(n.hyp));
      } else {
        survivors.push_back(std::move(n));
      }
    }
    live = std::move(survivors);
  }
  if (done.empty()) throw Error("beam search finished without a hypothesis");

  out.best = *std::min_element(done.begin(), done.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.score() > b.score();
  });
  for (int tok : out.best.tokens) {
    if (tok == kEos) break;
    if (tok >= ex.extended_size()) throw Error("generated id outside the extended vocabulary");
    out.tokens.push_back(tok);
    out.words.push_back(extended_token(tok, vocab, ex.oov));
  }
  out.answer = detokenize(out.words);
  return out;
}

template <class T>
HopTrace trace_hops(const ParamStore<T>& store, const ModelParams& mp, const Config& cfg, const ExampleView& ex) {
  ad::Graph<T> g(&store, nullptr);
  const auto enc = encode(g, mp, ex, cfg);
  const auto hops = run_hops(g, mp, enc.ms, enc.mq, enc.sentence_mask, cfg);
  return make_trace(hops, enc.sentence_mask);
}

std::string generation_record(const Generation& g) {
  nlohmann::json j;
  j["id"] = g.id;
  j["answer"] = g.answer;
  j["justification"] = g.justification;
  return j.dump();
}

std::vector<std::string> trace_records(const std::string& example_id, const HopTrace& trace) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < trace.weights.size(); ++k) {
    for (std::size_t i = 0; i < trace.weights[k].size(); ++i) {
      nlohmann::json j{{"example_id", example_id},
                       {"hop", k + 1},
                       {"sentence_index", i},
                       {"normalized_weight", trace.weights[k][i]}};
      out.push_back(j.dump());
    }
  }
  return out;
}

template Generation generate<float>(const ParamStore<float>&, const ModelParams&, const Config&, const Vocabulary&,
                                    const ExampleView&, int);
template Generation generate<double>(const ParamStore<double>&, const ModelParams&, const Config&, const Vocabulary&,
                                     const ExampleView&, int);
template HopTrace trace_hops<float>(const ParamStore<float>&, const ModelParams&, const Config&, const ExampleView&);
template HopTrace trace_hops<double>(const ParamStore<double>&, const ModelParams&, const Config&, const ExampleView&);

}  // namespace msg
