#include "msg/model.hpp"

namespace msg {

template <class T>
SourceEncoding<T> encode_source(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                                std::mt19937_64* rng) {
  SourceEncoding<T> s;
  s.enc = encode(g, mp, ex, cfg, rng);
  s.hops = run_hops(g, mp, s.enc.ms, s.enc.mq, s.enc.sentence_mask, cfg);
  s.agg = aggregate_hops(g, mp, s.hops, cfg.aggregation);
  s.mem = make_memory(g, mp, s.enc, s.agg, ex);
  s.init = initial_state(g, mp, s.enc);
  return s;
}

template <class T>
Unroll<T> teacher_forced(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                         const StepOptions& opt) {
  Unroll<T> u;
  u.source = encode_source(g, mp, cfg, ex, opt.rng);
  DecoderState<T> state = u.source.init;
  for (int tok : ex.decoder_input) {
    auto [out, next] = decoder_step(g, mp, cfg, u.source.mem, state, tok, opt);
    u.steps.push_back(std::move(out));
    state = std::move(next);
  }
  return u;
}

template SourceEncoding<float> encode_source<float>(ad::Graph<float>&, const ModelParams&, const Config&,
                                                    const ExampleView&, std::mt19937_64*);
template SourceEncoding<double> encode_source<double>(ad::Graph<double>&, const ModelParams&, const Config&,
                                                      const ExampleView&, std::mt19937_64*);
template Unroll<float> teacher_forced<float>(ad::Graph<float>&, const ModelParams&, const Config&, const ExampleView&,
                                             const StepOptions&);
template Unroll<double> teacher_forced<double>(ad::Graph<double>&, const ModelParams&, const Config&,
                                               const ExampleView&, const StepOptions&);

}  // namespace msg
