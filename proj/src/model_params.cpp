#include "msg/model_params.hpp"

#include "msg/error.hpp"

namespace msg {

namespace {

// Shared by create and bind so the two can never disagree on names/shapes.
template <class T>
class Declarer {
 public:
  Declarer(ParamStore<T>* store, const ParamStore<T>* view) : store_(store), view_(view) {}

  int operator()(const std::string& name, int rows, int cols) {
    if (store_ != nullptr) return store_->add(name, rows, cols);
    const int i = view_->index(name);
    const auto& p = (*view_)[i];
    if (p.rows != rows || p.cols != cols) {
      throw DimensionError("parameter '" + name + "' has shape " + ad::shape_string(p.rows, p.cols) +
                           ", configuration expects " + ad::shape_string(rows, cols));
    }
    return i;
  }

  LstmParamIds lstm(const std::string& prefix, int in, int hidden) {
    return {(*this)(prefix + ".input", in, 4 * hidden), (*this)(prefix + ".recurrent", hidden, 4 * hidden),
            (*this)(prefix + ".bias", 1, 4 * hidden)};
  }

  AttentionParamIds attention(const std::string& prefix, const std::string& view, int key, int state, int attn) {
    return {(*this)(prefix + ".W_" + view, key, attn), (*this)(prefix + ".W_" + view + "s", state, attn),
            (*this)(prefix + ".b_" + view, 1, attn), (*this)(prefix + ".omega_" + view, attn, 1),
            (*this)(prefix + ".w_cov", 1, attn)};
  }

 private:
  ParamStore<T>* store_;
  const ParamStore<T>* view_;
};

template <class T>
ModelParams declare(Declarer<T>& d, const Config& cfg, int vocab_size) {
  const int e = cfg.emb_dim;
  const int h = cfg.enc_hidden;
  const int dh = cfg.enc_out();
  const int hd = cfg.dec_hidden;
  const int a = cfg.attn_dim;
  ModelParams m;
  m.vocab_size = vocab_size;
  m.embedding = d("embedding", vocab_size, e);
  m.enc_fw = d.lstm("encoder.fw", e, h);
  m.enc_bw = d.lstm("encoder.bw", e, h);
  m.coatt_u = d("coattention.U", dh, dh);
  for (int k = 1; k <= cfg.hops; ++k) {
    if (!cfg.hop_refiner) break;
    const std::string p = "hop" + std::to_string(k) + ".refine";
    m.refine_fw.push_back(d.lstm(p + ".fw", dh, h));
    m.refine_bw.push_back(d.lstm(p + ".bw", dh, h));
  }
  m.attentive_w = d("attentive.W_m", 2 * dh, a);
  m.attentive_omega = d("attentive.omega_m", a, 1);
  m.mar_u1 = d("mar.U_1", dh, dh);
  m.mar_u2 = d("mar.U_2", dh, dh);
  m.hop_w = d("hops.W_h", dh, a);
  m.hop_omega = d("hops.omega_h", a, 1);
  m.dec = d.lstm("decoder.lstm", e, hd);
  m.init_h_w = d("decoder.init_h.W", dh, hd);
  m.init_h_b = d("decoder.init_h.b", 1, hd);
  m.init_c_w = d("decoder.init_c.W", dh, hd);
  m.init_c_b = d("decoder.init_c.b", 1, hd);
  m.attn_q = d.attention("attn_q", "q", dh, hd, a);
  m.attn_d = d.attention("attn_d", "d", dh, hd, a);
  m.gate_w = d("gate.W_s", dh, a);
  m.gate_w_state = d("gate.W_ss", hd, a);
  m.gate_b = d("gate.b_s", 1, a);
  m.gate_omega = d("gate.omega_s", a, 1);
  m.out_w1 = d("output.W_1", hd + 2 * dh, hd);
  m.out_b1 = d("output.b_1", 1, hd);
  m.out_w2 = d("output.W_2", hd, vocab_size);
  m.out_b2 = d("output.b_2", 1, vocab_size);
  m.ptr_w = d("pointer.W_rho", hd + 2 * dh, 3);
  m.ptr_b = d("pointer.b_rho", 1, 3);
  return m;
}

}  // namespace

template <class T>
ModelParams create_model_params(ParamStore<T>& store, const Config& cfg, int vocab_size) {
  if (store.size() != 0) throw ConfigError("create_model_params expects an empty store");
  Declarer<T> d(&store, nullptr);
  ModelParams m = declare(d, cfg, vocab_size);
  store.init_uniform(cfg.init_range, cfg.seed);
  store.fill_accumulators(static_cast<T>(cfg.init_acc));
  return m;
}

template <class T>
ModelParams bind_model_params(const ParamStore<T>& store, const Config& cfg) {
  Declarer<T> d(nullptr, &store);
  const int vocab = store[store.index("embedding")].rows;
  return declare(d, cfg, vocab);
}

template ModelParams create_model_params<float>(ParamStore<float>&, const Config&, int);
template ModelParams create_model_params<double>(ParamStore<double>&, const Config&, int);
template ModelParams bind_model_params<float>(const ParamStore<float>&, const Config&);
template ModelParams bind_model_params<double>(const ParamStore<double>&, const Config&);

}  // namespace msg
