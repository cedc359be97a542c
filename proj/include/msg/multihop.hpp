#pragma once

#include <string>
#include <vector>

#include "msg/autograd.hpp"
#include "msg/config.hpp"
#include "msg/model_params.hpp"

namespace msg {

template <class T>
struct HopState {
  int hop = 0;          // 1-based
  ad::Var<T> refined;   // n x d_h, input to the hop unit
  ad::Var<T> output;    // n x d_h
  ad::Var<T> scores;    // n x 1: softmax weights (attentive) or sigmoid gates (MAR)
  bool normalized = false;
};

// Per-hop sentence weights, normalised to sum to one over live sentences.
struct HopTrace {
  std::vector<std::vector<double>> weights;  // hops x n
};

template <class T>
struct AggregatedDoc {
  ad::Var<T> z;      // n x d_h
  ad::Var<T> alpha;  // n x K
};

// score_i = omega^T tanh(W [M_s_i ; M_q]); softmax over live sentences.
template <class T>
HopState<T> attentive_unit(ad::Var<T> ms, ad::Var<T> mq, std::span<const std::uint8_t> sent_mask, ad::Var<T> w,
                           ad::Var<T> omega);

// lambda * M_s U1 M_q^T + (1 - lambda) * max_{j != i} softmax_{j != i}(tanh(M_s U2 M_s^T)); n x 1.
template <class T>
ad::Var<T> mar_scores(ad::Var<T> ms, ad::Var<T> mq, std::span<const std::uint8_t> sent_mask, double lambda,
                      ad::Var<T> u1, ad::Var<T> u2);

template <class T>
HopState<T> mar_unit(ad::Var<T> ms, ad::Var<T> mq, std::span<const std::uint8_t> sent_mask, double lambda,
                     ad::Var<T> u1, ad::Var<T> u2);

template <class T>
std::vector<HopState<T>> run_hops(ad::Graph<T>& g, const ModelParams& mp, ad::Var<T> ms, ad::Var<T> mq,
                                  std::span<const std::uint8_t> sent_mask, const Config& cfg);

template <class T>
AggregatedDoc<T> aggregate_hops(ad::Graph<T>& g, const ModelParams& mp, const std::vector<HopState<T>>& hops,
                                Aggregation mode);

template <class T>
HopTrace make_trace(const std::vector<HopState<T>>& hops, std::span<const std::uint8_t> sent_mask);

}  // namespace msg
