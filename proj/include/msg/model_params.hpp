#pragma once

#include <vector>

#include "msg/autograd.hpp"
#include "msg/config.hpp"
#include "msg/params.hpp"

namespace msg {

struct LstmParamIds {
  int input = -1;
  int recurrent = -1;
  int bias = -1;
};

struct AttentionParamIds {
  int w_key = -1;    // d_h x attn   (W_q / W_d)
  int w_state = -1;  // dec x attn   (W_qs / W_ds)
  int bias = -1;     // 1 x attn     (b_q / b_d)
  int omega = -1;    // attn x 1     (omega^q / omega^d)
  int w_cov = -1;    // 1 x attn     coverage projection
};

// Indices of every learned matrix in a ParamStore, grouped by component.
struct ModelParams {
  int vocab_size = 0;

  int embedding = -1;
  LstmParamIds enc_fw, enc_bw;
  int coatt_u = -1;

  std::vector<LstmParamIds> refine_fw, refine_bw;  // one pair per hop
  int attentive_w = -1;      // 2 d_h x attn
  int attentive_omega = -1;  // attn x 1
  int mar_u1 = -1;
  int mar_u2 = -1;
  int hop_w = -1;      // d_h x attn
  int hop_omega = -1;  // attn x 1

  LstmParamIds dec;
  int init_h_w = -1, init_h_b = -1, init_c_w = -1, init_c_b = -1;
  AttentionParamIds attn_q, attn_d;
  int gate_w = -1, gate_w_state = -1, gate_b = -1, gate_omega = -1;
  int out_w1 = -1, out_b1 = -1, out_w2 = -1, out_b2 = -1;
  int ptr_w = -1, ptr_b = -1;
};

// Adds every parameter for cfg and a vocabulary of vocab_size to an empty
// store, initialised from U[-init_range, init_range] with cfg.seed.
template <class T>
ModelParams create_model_params(ParamStore<T>& store, const Config& cfg, int vocab_size);

// Looks the parameters up by name (e.g. after loading a checkpoint) and
// checks their shapes against cfg.
template <class T>
ModelParams bind_model_params(const ParamStore<T>& store, const Config& cfg);

template <class T>
ad::LstmWeights<T> lstm_weights(ad::Graph<T>& g, const LstmParamIds& ids) {
  return {g.param(ids.input), g.param(ids.recurrent), g.param(ids.bias)};
}

}  // namespace msg
