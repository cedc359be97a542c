#include "msg/multihop.hpp"

#include "msg/encoder.hpp"
#include "msg/error.hpp"

namespace msg {

using ad::Var;

namespace {

template <class T>
Var<T> mask_column(ad::Graph<T>& g, std::span<const std::uint8_t> mask, int n) {
  std::vector<T> v(static_cast<std::size_t>(n), T(1));
  for (int i = 0; i < n && !mask.empty(); ++i) v[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? 1 : 0;
  return g.constant(n, 1, std::move(v));
}

}  // namespace

template <class T>
HopState<T> attentive_unit(Var<T> ms, Var<T> mq, std::span<const std::uint8_t> sent_mask, Var<T> w, Var<T> omega) {
  const int n = ms.rows();
  const std::vector<int> rep(static_cast<std::size_t>(n), 0);
  const Var<T> parts[2] = {ms, gather_rows(mq, std::span<const int>(rep))};
  const Var<T> logits = matmul(tanh(matmul(concat_cols<T>(parts), w)), omega);
  HopState<T> h;
  h.refined = ms;
  h.scores = masked_softmax(logits, sent_mask, 0);
  h.output = scale_rows(ms, h.scores);
  h.normalized = true;
  return h;
}

template <class T>
Var<T> mar_scores(Var<T> ms, Var<T> mq, std::span<const std::uint8_t> sent_mask, double lambda, Var<T> u1, Var<T> u2) {
  if (lambda < 0 || lambda > 1) throw ConfigError("lambda_mar must lie in [0, 1]");
  const int n = ms.rows();
  const Var<T> sim1 = matmul(matmul(ms, u1), mq, false, true);
  const Var<T> e = tanh(matmul(matmul(ms, u2), ms, false, true));
  ad::Mask pairs(static_cast<std::size_t>(n * n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool live = sent_mask.empty() || (sent_mask[static_cast<std::size_t>(i)] && sent_mask[static_cast<std::size_t>(j)]);
      pairs[static_cast<std::size_t>(i * n + j)] = i != j && live ? 1 : 0;
    }
  }
  // a sentence without competitors contributes 0 to the consistency term
  const Var<T> sim2 = masked_softmax(e, pairs, 1, ad::EmptyGroup::kZero);
  const Var<T> best = masked_max(sim2, pairs, 1, ad::EmptyGroup::kZero);
  return add(scale(sim1, static_cast<T>(lambda)), scale(best, static_cast<T>(1 - lambda)));
}

template <class T>
HopState<T> mar_unit(Var<T> ms, Var<T> mq, std::span<const std::uint8_t> sent_mask, double lambda, Var<T> u1,
                     Var<T> u2) {
  HopState<T> h;
  h.refined = ms;
  h.scores = sigmoid(mar_scores(ms, mq, sent_mask, lambda, u1, u2));
  if (!sent_mask.empty()) h.scores = mul(h.scores, mask_column(*ms.graph, sent_mask, ms.rows()));
  h.output = scale_rows(ms, h.scores);
  return h;
}

template <class T>
std::vector<HopState<T>> run_hops(ad::Graph<T>& g, const ModelParams& mp, Var<T> ms, Var<T> mq,
                                  std::span<const std::uint8_t> sent_mask, const Config& cfg) {
  if (cfg.hops < 1) throw ConfigError("hops must be at least 1");
  const int n = ms.rows();
  std::vector<HopState<T>> hops;
  Var<T> input = ms;
  for (int k = 1; k <= cfg.hops; ++k) {
    Var<T> refined = input;
    if (cfg.hop_refiner) {
      const auto idx = static_cast<std::size_t>(k - 1);
      refined = run_bilstm(input, 1, n, sent_mask, lstm_weights(g, mp.refine_fw.at(idx)),
                           lstm_weights(g, mp.refine_bw.at(idx)), cfg.enc_hidden)
                    .states;
    }
    HopState<T> h = k == 1 || !cfg.mar_unit
                        ? attentive_unit(refined, mq, sent_mask, g.param(mp.attentive_w), g.param(mp.attentive_omega))
                        : mar_unit(refined, mq, sent_mask, cfg.lambda_mar, g.param(mp.mar_u1), g.param(mp.mar_u2));
    h.hop = k;
    input = h.output;
    hops.push_back(h);
  }
  return hops;
}

template <class T>
AggregatedDoc<T> aggregate_hops(ad::Graph<T>& g, const ModelParams& mp, const std::vector<HopState<T>>& hops,
                                Aggregation mode) {
  if (hops.empty()) throw ConfigError("aggregate_hops: no hops");
  const int n = hops.front().output.rows();
  const int k = static_cast<int>(hops.size());
  AggregatedDoc<T> out;
  if (k == 1 || mode == Aggregation::kLast) {
    std::vector<T> onehot(static_cast<std::size_t>(n * k), T(0));
    for (int i = 0; i < n; ++i) onehot[static_cast<std::size_t>(i * k + k - 1)] = 1;
    out.alpha = g.constant(n, k, std::move(onehot));
    out.z = hops.back().output;
    return out;
  }
  if (mode == Aggregation::kUniform) {
    out.alpha = g.constant(n, k, std::vector<T>(static_cast<std::size_t>(n * k), T(1) / static_cast<T>(k)));
  } else {
    const Var<T> w = g.param(mp.hop_w);
    const Var<T> omega = g.param(mp.hop_omega);
    std::vector<Var<T>> cols;
    for (const auto& h : hops) cols.push_back(matmul(tanh(matmul(h.output, w)), omega));
    out.alpha = softmax(concat_cols<T>(cols), 1);
  }
  for (int j = 0; j < k; ++j) {
    const Var<T> term = scale_rows(hops[static_cast<std::size_t>(j)].output, slice_cols(out.alpha, j, 1));
    out.z = j == 0 ? term : add(out.z, term);
  }
  return out;
}

template <class T>
HopTrace make_trace(const std::vector<HopState<T>>& hops, std::span<const std::uint8_t> sent_mask) {
  HopTrace tr;
  for (const auto& h : hops) {
    const auto v = h.scores.value();
    std::vector<double> w(v.size(), 0.0);
    double total = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!sent_mask.empty() && sent_mask[i] == 0) continue;
      w[i] = static_cast<double>(v[i]);
      total += w[i];
    }
    if (total > 0) {
      for (auto& x : w) x /= total;
    }
    tr.weights.push_back(std::move(w));
  }
  return tr;
}

#define MSG_INSTANTIATE(T)                                                                                      \
  template HopState<T> attentive_unit<T>(Var<T>, Var<T>, std::span<const std::uint8_t>, Var<T>, Var<T>);        \
  template Var<T> mar_scores<T>(Var<T>, Var<T>, std::span<const std::uint8_t>, double, Var<T>, Var<T>);         \
  template HopState<T> mar_unit<T>(Var<T>, Var<T>, std::span<const std::uint8_t>, double, Var<T>, Var<T>);      \
  template std::vector<HopState<T>> run_hops<T>(ad::Graph<T>&, const ModelParams&, Var<T>, Var<T>,              \
                                                std::span<const std::uint8_t>, const Config&);                  \
  template AggregatedDoc<T> aggregate_hops<T>(ad::Graph<T>&, const ModelParams&, const std::vector<HopState<T>>&, \
                                              Aggregation);                                                      \
  template HopTrace make_trace<T>(const std::vector<HopState<T>>&, std::span<const std::uint8_t>);

MSG_INSTANTIATE(float)
MSG_INSTANTIATE(double)

}  // namespace msg
