#pragma once

#include <random>
#include <utility>
#include <vector>

#include "msg/autograd.hpp"
#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/encoder.hpp"
#include "msg/model_params.hpp"
#include "msg/multihop.hpp"

namespace msg {

template <class T>
struct AttentionView {
  ad::Var<T> keys;     // L x attn, H W_key (fixed across steps)
  ad::Var<T> w_state;  // dec x attn
  ad::Var<T> bias;     // 1 x attn
  ad::Var<T> omega;    // attn x 1
  ad::Var<T> w_cov;    // 1 x attn
  ad::Mask mask;
};

template <class T>
struct Attention {
  ad::Var<T> e;      // L x 1
  ad::Var<T> alpha;  // L x 1
};

// e_i = omega^T tanh(keys_i + s W_state + cov_i w_cov + b), alpha = masked softmax.
template <class T>
Attention<T> attend_view(const AttentionView<T>& v, ad::Var<T> s, ad::Var<T> coverage);

// beta_k = sigmoid(omega^T tanh(z_keys_k + s W_ss + b)) (or a softmax over
// sentences). Masked sentences get 0. Returns n x 1.
template <class T>
ad::Var<T> gate_sentences(ad::Var<T> z_keys, ad::Var<T> s, ad::Var<T> w_state, ad::Var<T> bias, ad::Var<T> omega,
                          GateMode mode, std::span<const std::uint8_t> sentence_mask);

// alpha_i * beta_sent(i), renormalised. Falls back to alpha (and bumps
// *fallbacks) when every gated weight is zero.
template <class T>
ad::Var<T> reweight_doc_attention(ad::Var<T> alpha, ad::Var<T> beta, std::span<const int> sentence_of_word,
                                  long* fallbacks = nullptr);

// Step-invariant decoder inputs derived from the encoder and Z.
template <class T>
struct SourceMemory {
  ad::Var<T> hq;
  ad::Var<T> hd;
  ad::Var<T> z_keys;  // n x attn
  AttentionView<T> q_view, d_view;
  ad::Mask sentence_mask;
  std::vector<int> sentence_of_word;
  std::vector<int> q_ext, d_ext;
  int vocab_size = 0;
  int extended_size = 0;
};

template <class T>
SourceMemory<T> make_memory(ad::Graph<T>& g, const ModelParams& mp, const EncoderOutput<T>& enc,
                            const AggregatedDoc<T>& agg, const ExampleView& ex);

template <class T>
struct DecoderState {
  ad::LstmState<T> lstm;
  ad::Var<T> cov_q;  // Lq x 1
  ad::Var<T> cov_d;  // Ld x 1
  int step = 0;
};

// tanh projections of the document's final encoder state, zero coverage.
template <class T>
DecoderState<T> initial_state(ad::Graph<T>& g, const ModelParams& mp, const EncoderOutput<T>& enc);

template <class T>
struct StepOutput {
  ad::Var<T> alpha_q, alpha_d, alpha_d_hat;  // L x 1
  ad::Var<T> beta;                           // n x 1
  ad::Var<T> ctx_q, ctx_d;                   // 1 x d_h
  ad::Var<T> rho;                            // 1 x 3: vocab, question, document
  ad::Var<T> p_vocab;                        // 1 x |V|
  ad::Var<T> p_question, p_document;         // 1 x extended
  ad::Var<T> p_final;                        // 1 x extended
  // Coverage seen by this step; only kept when recording for the MVC loss.
  ad::Var<T> cov_q, cov_d;
};

struct StepOptions {
  bool record_coverage = true;
  std::mt19937_64* rng = nullptr;  // dropout on the decoder output
  long* gate_fallbacks = nullptr;
};

// prev_token is an extended id; ids outside the vocabulary are fed as UNK.
template <class T>
std::pair<StepOutput<T>, DecoderState<T>> decoder_step(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg,
                                                       const SourceMemory<T>& mem, const DecoderState<T>& state,
                                                       int prev_token, const StepOptions& opt = {});

}  // namespace msg
