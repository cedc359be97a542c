#pragma once

#include <random>
#include <vector>

#include "msg/autograd.hpp"
#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/model_params.hpp"

namespace msg {

template <class T>
struct BiLstmOutput {
  ad::Var<T> states;    // (steps * batch) x 2H, time-major, zero at masked positions
  ad::Var<T> fw_final;  // batch x H, forward state after the last live step
  ad::Var<T> bw_final;  // batch x H, backward state after the first live step
};

// Runs both directions over a time-major input (steps * batch rows). A masked
// row keeps its previous state and emits zeros. An empty mask means all live.
template <class T>
BiLstmOutput<T> run_bilstm(ad::Var<T> inputs, int batch, int steps, std::span<const std::uint8_t> mask,
                           const ad::LstmWeights<T>& fw, const ad::LstmWeights<T>& bw, int hidden);

template <class T>
struct SharedEncoding {
  ad::Var<T> hq;               // Lq x d_h
  std::vector<ad::Var<T>> hs;  // n of (Ls x d_h)
  ad::Var<T> hd;               // (n * Ls) x d_h, sentence-major
  ad::Var<T> doc_final;        // 1 x d_h: [fw of last sentence | bw of first]
};

// One Bi-LSTM with shared weights over the question and all sentences.
// rng enables dropout on the outputs.
template <class T>
SharedEncoding<T> encode_shared(ad::Graph<T>& g, const ModelParams& mp, const ExampleView& ex, const Config& cfg,
                                std::mt19937_64* rng = nullptr);

template <class T>
struct CoAttention {
  ad::Var<T> alpha_q;  // Lq x 1
  ad::Var<T> alpha_s;  // 1 x Ls
};

// O = tanh(Hq U Hs^T); each side softmaxes the max over the other side's words.
template <class T>
CoAttention<T> coattend(ad::Var<T> hq, ad::Var<T> hs, ad::Var<T> u, std::span<const std::uint8_t> q_mask,
                        std::span<const std::uint8_t> s_mask);

// M_q (1 x d_h) averages alpha_q^T Hq over sentences; M_s row i = alpha_s_i Hs_i.
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> sentence_reps(ad::Var<T> hq, const std::vector<ad::Var<T>>& hs,
                                                const std::vector<CoAttention<T>>& att);

template <class T>
struct EncoderOutput {
  SharedEncoding<T> words;
  std::vector<CoAttention<T>> coatt;
  ad::Var<T> mq;  // 1 x d_h
  ad::Var<T> ms;  // n x d_h
  ad::Mask q_mask;
  ad::Mask doc_mask;       // n * Ls
  ad::Mask sentence_mask;  // n
  std::vector<int> sentence_of_word;
};

template <class T>
EncoderOutput<T> encode(ad::Graph<T>& g, const ModelParams& mp, const ExampleView& ex, const Config& cfg,
                        std::mt19937_64* rng = nullptr);

}  // namespace msg
