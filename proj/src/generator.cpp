#include "msg/generator.hpp"

#include <cmath>
#include <limits>

#include "msg/error.hpp"

namespace msg {

using ad::Var;

template <class T>
Attention<T> attend_view(const AttentionView<T>& v, Var<T> s, Var<T> coverage) {
  Var<T> pre = add_row(v.keys, add(matmul(s, v.w_state), v.bias));
  if (coverage.valid()) pre = add(pre, matmul(coverage, v.w_cov));
  Attention<T> a;
  a.e = matmul(tanh(pre), v.omega);
  a.alpha = masked_softmax(a.e, v.mask, 0);
  return a;
}

template <class T>
Var<T> gate_sentences(Var<T> z_keys, Var<T> s, Var<T> w_state, Var<T> bias, Var<T> omega, GateMode mode,
                      std::span<const std::uint8_t> sentence_mask) {
  const Var<T> score = matmul(tanh(add_row(z_keys, add(matmul(s, w_state), bias))), omega);
  if (mode == GateMode::kSoftmax) return masked_softmax(score, sentence_mask, 0);
  Var<T> beta = sigmoid(score);
  if (!sentence_mask.empty()) {
    std::vector<T> m(sentence_mask.begin(), sentence_mask.end());
    beta = mul(beta, score.graph->constant(score.rows(), 1, std::move(m)));
  }
  return beta;
}

template <class T>
Var<T> reweight_doc_attention(Var<T> alpha, Var<T> beta, std::span<const int> sentence_of_word, long* fallbacks) {
  if (static_cast<std::size_t>(alpha.rows()) != sentence_of_word.size() || alpha.cols() != 1) {
    throw DimensionError("reweight_doc_attention: attention " + ad::shape_string(alpha.rows(), alpha.cols()) +
                         " for " + std::to_string(sentence_of_word.size()) + " words");
  }
  const Var<T> gated = mul(alpha, gather_rows(beta, sentence_of_word));
  const Var<T> total = sum(gated);
  if (!(total.item() > std::numeric_limits<T>::min())) {
    if (fallbacks != nullptr) ++*fallbacks;
    return alpha;
  }
  return div_scalar(gated, total);
}

template <class T>
SourceMemory<T> make_memory(ad::Graph<T>& g, const ModelParams& mp, const EncoderOutput<T>& enc,
                            const AggregatedDoc<T>& agg, const ExampleView& ex) {
  SourceMemory<T> m;
  m.hq = enc.words.hq;
  m.hd = enc.words.hd;
  auto view = [&](const AttentionParamIds& ids, Var<T> h, const ad::Mask& mask) {
    return AttentionView<T>{matmul(h, g.param(ids.w_key)), g.param(ids.w_state), g.param(ids.bias),
                            g.param(ids.omega), g.param(ids.w_cov), mask};
  };
  m.q_view = view(mp.attn_q, m.hq, enc.q_mask);
  m.d_view = view(mp.attn_d, m.hd, enc.doc_mask);
  m.z_keys = matmul(agg.z, g.param(mp.gate_w));
  m.sentence_mask = enc.sentence_mask;
  m.sentence_of_word = enc.sentence_of_word;
  m.q_ext = ex.question_ext;
  m.d_ext = ex.doc_ext;
  m.vocab_size = ex.vocab_size;
  m.extended_size = ex.extended_size();
  return m;
}

template <class T>
DecoderState<T> initial_state(ad::Graph<T>& g, const ModelParams& mp, const EncoderOutput<T>& enc) {
  const Var<T> f = enc.words.doc_final;
  DecoderState<T> s;
  s.lstm.h = tanh(add(matmul(f, g.param(mp.init_h_w)), g.param(mp.init_h_b)));
  s.lstm.c = tanh(add(matmul(f, g.param(mp.init_c_w)), g.param(mp.init_c_b)));
  s.cov_q = g.zeros(enc.words.hq.rows(), 1);
  s.cov_d = g.zeros(enc.words.hd.rows(), 1);
  return s;
}

template <class T>
std::pair<StepOutput<T>, DecoderState<T>> decoder_step(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg,
                                                       const SourceMemory<T>& mem, const DecoderState<T>& state,
                                                       int prev_token, const StepOptions& opt) {
  const int in_vocab = prev_token >= 0 && prev_token < mem.vocab_size ? prev_token : kUnk;
  const Var<T> x = gather_rows(g.param(mp.embedding), std::span<const int>(&in_vocab, 1));
  DecoderState<T> next;
  next.lstm = ad::lstm_step(x, state.lstm, lstm_weights(g, mp.dec));
  next.step = state.step + 1;
  Var<T> s = next.lstm.h;
  if (opt.rng != nullptr && cfg.dropout > 0) s = dropout(s, cfg.dropout, *opt.rng);

  StepOutput<T> o;
  o.alpha_q = attend_view(mem.q_view, s, state.cov_q).alpha;
  o.alpha_d = attend_view(mem.d_view, s, state.cov_d).alpha;
  o.beta = gate_sentences(mem.z_keys, s, g.param(mp.gate_w_state), g.param(mp.gate_b), g.param(mp.gate_omega), cfg.gate,
                          mem.sentence_mask);
  o.alpha_d_hat = reweight_doc_attention(o.alpha_d, o.beta, mem.sentence_of_word, opt.gate_fallbacks);
  o.ctx_q = matmul(o.alpha_q, mem.hq, true, false);
  o.ctx_d = matmul(o.alpha_d_hat, mem.hd, true, false);

  const Var<T> parts[3] = {s, o.ctx_q, o.ctx_d};
  const Var<T> feat = concat_cols<T>(parts);
  const Var<T> hs = add(matmul(feat, g.param(mp.out_w1)), g.param(mp.out_b1));
  o.p_vocab = softmax(add(matmul(hs, g.param(mp.out_w2)), g.param(mp.out_b2)), 1);
  const Var<T> rho_logits = add(matmul(feat, g.param(mp.ptr_w)), g.param(mp.ptr_b));
  static const ad::Mask kNoQuestion{1, 0, 1};
  o.rho = cfg.question_pointer ? softmax(rho_logits, 1) : masked_softmax(rho_logits, kNoQuestion, 1);

  o.p_question = scatter_add(o.alpha_q, std::span<const int>(mem.q_ext), mem.extended_size);
  o.p_document = scatter_add(o.alpha_d_hat, std::span<const int>(mem.d_ext), mem.extended_size);
  o.p_final = add(mul_scalar(pad_cols(o.p_vocab, mem.extended_size), pick(o.rho, 0)),
                  mul_scalar(o.p_document, pick(o.rho, 2)));
  if (cfg.question_pointer) o.p_final = add(o.p_final, mul_scalar(o.p_question, pick(o.rho, 1)));
  for (T p : o.p_final.value()) {
    if (!std::isfinite(p)) {
      throw NumericError("non-finite output probability at decoder step " + std::to_string(state.step));
    }
  }

  if (opt.record_coverage) {
    o.cov_q = state.cov_q;
    o.cov_d = state.cov_d;
  }
  next.cov_q = add(state.cov_q, o.alpha_q);
  next.cov_d = add(state.cov_d, o.alpha_d_hat);
  return {o, next};
}

#define MSG_INSTANTIATE(T)                                                                                         \
  template Attention<T> attend_view<T>(const AttentionView<T>&, Var<T>, Var<T>);                                  \
  template Var<T> gate_sentences<T>(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, GateMode, std::span<const std::uint8_t>); \
  template Var<T> reweight_doc_attention<T>(Var<T>, Var<T>, std::span<const int>, long*);                         \
  template SourceMemory<T> make_memory<T>(ad::Graph<T>&, const ModelParams&, const EncoderOutput<T>&,             \
                                          const AggregatedDoc<T>&, const ExampleView&);                           \
  template DecoderState<T> initial_state<T>(ad::Graph<T>&, const ModelParams&, const EncoderOutput<T>&);          \
  template std::pair<StepOutput<T>, DecoderState<T>> decoder_step<T>(ad::Graph<T>&, const ModelParams&,           \
                                                                     const Config&, const SourceMemory<T>&,       \
                                                                     const DecoderState<T>&, int, const StepOptions&);

MSG_INSTANTIATE(float)
MSG_INSTANTIATE(double)

}  // namespace msg
