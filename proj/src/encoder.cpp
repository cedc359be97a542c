#include "msg/encoder.hpp"

#include <algorithm>

#include "msg/error.hpp"

namespace msg {

using ad::Var;

template <class T>
BiLstmOutput<T> run_bilstm(Var<T> inputs, int batch, int steps, std::span<const std::uint8_t> mask,
                           const ad::LstmWeights<T>& fw, const ad::LstmWeights<T>& bw, int hidden) {
  if (inputs.rows() != batch * steps) {
    throw DimensionError("run_bilstm: " + std::to_string(inputs.rows()) + " input rows for " +
                         std::to_string(steps) + " steps of " + std::to_string(batch));
  }
  auto& g = *inputs.graph;
  const Var<T> zero = g.zeros(batch, hidden);
  auto step_mask = [&](int t) { return mask.empty() ? mask : mask.subspan(static_cast<std::size_t>(t * batch), batch); };
  auto all_live = [](std::span<const std::uint8_t> m) {
    return std::all_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
  };

  auto sweep = [&](const ad::LstmWeights<T>& w, bool reverse, std::vector<Var<T>>& out) {
    ad::LstmState<T> st{zero, zero};
    out.assign(static_cast<std::size_t>(steps), Var<T>{});
    for (int s = 0; s < steps; ++s) {
      const int t = reverse ? steps - 1 - s : s;
      const Var<T> x = slice_rows(inputs, t * batch, batch);
      ad::LstmState<T> next = ad::lstm_step(x, st, w);
      const auto m = step_mask(t);
      if (all_live(m)) {
        st = next;
        out[static_cast<std::size_t>(t)] = next.h;
      } else {
        st = {blend_rows(next.h, st.h, m), blend_rows(next.c, st.c, m)};
        out[static_cast<std::size_t>(t)] = blend_rows(next.h, zero, m);
      }
    }
    return st.h;
  };

  std::vector<Var<T>> fh, bh;
  BiLstmOutput<T> res;
  res.fw_final = sweep(fw, false, fh);
  res.bw_final = sweep(bw, true, bh);
  std::vector<Var<T>> rows;
  rows.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const Var<T> pair[2] = {fh[static_cast<std::size_t>(t)], bh[static_cast<std::size_t>(t)]};
    rows.push_back(concat_cols<T>(pair));
  }
  res.states = concat_rows<T>(rows);
  return res;
}

template <class T>
SharedEncoding<T> encode_shared(ad::Graph<T>& g, const ModelParams& mp, const ExampleView& ex, const Config& cfg,
                                std::mt19937_64* rng) {
  const int n = ex.num_sentences;
  const int w = ex.sentence_len;
  const int lq = static_cast<int>(ex.question_ids.size());
  if (n < 1 || w < 1 || lq < 1) throw DataError("example '" + ex.id + "' has an empty question or document");
  const Var<T> emb = g.param(mp.embedding);
  const auto fw = lstm_weights(g, mp.enc_fw);
  const auto bw = lstm_weights(g, mp.enc_bw);
  const int h = cfg.enc_hidden;

  SharedEncoding<T> out;
  const auto q = run_bilstm(gather_rows(emb, std::span<const int>(ex.question_ids)), 1, lq, {}, fw, bw, h);
  out.hq = q.states;

  // sentences run in lockstep as a batch of n rows, time-major
  std::vector<int> ids(static_cast<std::size_t>(n * w));
  ad::Mask mask(ids.size());
  for (int t = 0; t < w; ++t) {
    for (int i = 0; i < n; ++i) {
      ids[static_cast<std::size_t>(t * n + i)] = ex.doc_ids[static_cast<std::size_t>(i * w + t)];
      mask[static_cast<std::size_t>(t * n + i)] = ex.doc_mask[static_cast<std::size_t>(i * w + t)];
    }
  }
  const auto s = run_bilstm(gather_rows(emb, std::span<const int>(ids)), n, w, mask, fw, bw, h);
  Var<T> states = s.states;
  if (rng != nullptr && cfg.dropout > 0) {
    out.hq = dropout(out.hq, cfg.dropout, *rng);
    states = dropout(states, cfg.dropout, *rng);
  }

  std::vector<int> rows(static_cast<std::size_t>(w));
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < w; ++t) rows[static_cast<std::size_t>(t)] = t * n + i;
    out.hs.push_back(gather_rows(states, std::span<const int>(rows)));
  }
  std::vector<int> doc_rows(static_cast<std::size_t>(n * w));
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < w; ++t) doc_rows[static_cast<std::size_t>(i * w + t)] = t * n + i;
  }
  out.hd = gather_rows(states, std::span<const int>(doc_rows));
  const Var<T> ends[2] = {slice_rows(s.fw_final, n - 1, 1), slice_rows(s.bw_final, 0, 1)};
  out.doc_final = concat_cols<T>(ends);
  return out;
}

template <class T>
CoAttention<T> coattend(Var<T> hq, Var<T> hs, Var<T> u, std::span<const std::uint8_t> q_mask,
                        std::span<const std::uint8_t> s_mask) {
  const int lq = hq.rows();
  const int ls = hs.rows();
  const Var<T> o = tanh(matmul(matmul(hq, u), hs, false, true));
  ad::Mask m(static_cast<std::size_t>(lq * ls));
  for (int r = 0; r < lq; ++r) {
    for (int c = 0; c < ls; ++c) {
      const bool qr = q_mask.empty() || q_mask[static_cast<std::size_t>(r)] != 0;
      const bool sc = s_mask.empty() || s_mask[static_cast<std::size_t>(c)] != 0;
      m[static_cast<std::size_t>(r * ls + c)] = qr && sc ? 1 : 0;
    }
  }
  // Rows/columns of masked words are empty groups; they get weight 0 anyway.
  CoAttention<T> a;
  a.alpha_q = masked_softmax(masked_max(o, m, 1, ad::EmptyGroup::kZero), q_mask, 0);
  a.alpha_s = masked_softmax(masked_max(o, m, 0, ad::EmptyGroup::kZero), s_mask, 1);
  return a;
}

template <class T>
std::pair<Var<T>, Var<T>> sentence_reps(Var<T> hq, const std::vector<Var<T>>& hs,
                                        const std::vector<CoAttention<T>>& att) {
  if (hs.empty() || hs.size() != att.size()) throw DimensionError("sentence_reps: need one co-attention per sentence");
  Var<T> mq;
  std::vector<Var<T>> rows;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const Var<T> term = matmul(att[i].alpha_q, hq, true, false);
    mq = i == 0 ? term : add(mq, term);
    rows.push_back(matmul(att[i].alpha_s, hs[i]));
  }
  if (hs.size() > 1) mq = scale(mq, T(1) / static_cast<T>(hs.size()));
  return {mq, concat_rows<T>(rows)};
}

template <class T>
EncoderOutput<T> encode(ad::Graph<T>& g, const ModelParams& mp, const ExampleView& ex, const Config& cfg,
                        std::mt19937_64* rng) {
  EncoderOutput<T> out;
  out.words = encode_shared(g, mp, ex, cfg, rng);
  const int n = ex.num_sentences;
  const int w = ex.sentence_len;
  out.q_mask.assign(ex.question_ids.size(), 1);
  out.doc_mask = ex.doc_mask;
  out.sentence_mask = ex.sentence_mask;
  out.sentence_of_word.resize(static_cast<std::size_t>(n * w));
  for (int i = 0; i < n * w; ++i) out.sentence_of_word[static_cast<std::size_t>(i)] = i / w;

  const Var<T> u = g.param(mp.coatt_u);
  for (int i = 0; i < n; ++i) {
    const auto s_mask = std::span<const std::uint8_t>(ex.doc_mask).subspan(static_cast<std::size_t>(i * w), w);
    if (std::none_of(s_mask.begin(), s_mask.end(), [](std::uint8_t v) { return v != 0; })) {
      throw DegenerateGroupError("example '" + ex.id + "': sentence " + std::to_string(i) + " is fully masked");
    }
    out.coatt.push_back(coattend(out.words.hq, out.words.hs[static_cast<std::size_t>(i)], u, out.q_mask, s_mask));
  }
  std::tie(out.mq, out.ms) = sentence_reps(out.words.hq, out.words.hs, out.coatt);
  return out;
}

#define MSG_INSTANTIATE(T)                                                                                       \
  template BiLstmOutput<T> run_bilstm<T>(Var<T>, int, int, std::span<const std::uint8_t>,                       \
                                         const ad::LstmWeights<T>&, const ad::LstmWeights<T>&, int);           \
  template SharedEncoding<T> encode_shared<T>(ad::Graph<T>&, const ModelParams&, const ExampleView&,            \
                                              const Config&, std::mt19937_64*);                                 \
  template CoAttention<T> coattend<T>(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>,                    \
                                      std::span<const std::uint8_t>);                                           \
  template std::pair<Var<T>, Var<T>> sentence_reps<T>(Var<T>, const std::vector<Var<T>>&,                       \
                                                      const std::vector<CoAttention<T>>&);                      \
  template EncoderOutput<T> encode<T>(ad::Graph<T>&, const ModelParams&, const ExampleView&, const Config&,     \
                                      std::mt19937_64*);

MSG_INSTANTIATE(float)
MSG_INSTANTIATE(double)

}  // namespace msg
