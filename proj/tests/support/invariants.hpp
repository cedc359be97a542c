#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "msg/config.hpp"
#include "msg/corpus.hpp"
#include "msg/model.hpp"

// Normalisation checks shared by the unit and acceptance suites.

namespace msg::test {

struct InvariantReport {
  long checks = 0;
  long violations = 0;
  std::string first;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok) {
      if (violations == 0) first = what;
      ++violations;
    }
  }
};

template <class T>
double column_sum(ad::Var<T> v) {
  double s = 0;
  for (T x : v.value()) s += static_cast<double>(x);
  return s;
}

// Distribution over the live entries of mask (all entries if mask is empty).
template <class T>
void expect_distribution(InvariantReport& r, ad::Var<T> v, std::span<const std::uint8_t> mask, double tol,
                         const std::string& what) {
  const auto x = v.value();
  bool nonneg = true;
  bool masked_zero = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    nonneg = nonneg && x[i] >= 0;
    if (!mask.empty() && mask[i] == 0) masked_zero = masked_zero && x[i] == 0;
  }
  const double s = column_sum(v);
  std::ostringstream os;
  os << what << " sums to " << s;
  r.expect(std::abs(s - 1.0) <= tol, os.str());
  r.expect(nonneg, what + " has a negative entry");
  r.expect(masked_zero, what + " puts weight on a padded position");
}

template <class T>
void check_step(InvariantReport& r, const StepOutput<T>& s, const SourceMemory<T>& mem, const Config& cfg) {
  expect_distribution(r, s.alpha_q, mem.q_view.mask, 1e-6, "alpha_q");
  expect_distribution(r, s.alpha_d, mem.d_view.mask, 1e-6, "alpha_d");
  expect_distribution(r, s.alpha_d_hat, mem.d_view.mask, 1e-6, "reweighted alpha_d");
  expect_distribution(r, s.rho, {}, 1e-6, "rho");
  if (!cfg.question_pointer) r.expect(s.rho.value()[1] == 0, "rho_q is not zero with the question pointer off");
  expect_distribution(r, s.p_final, {}, 1e-5, "P(y_t)");
  expect_distribution(r, s.p_vocab, {}, 1e-5, "P^v");
  expect_distribution(r, s.p_document, {}, 1e-5, "P^d");
  expect_distribution(r, s.p_question, {}, 1e-5, "P^q");
  for (std::size_t i = 0; i < mem.sentence_mask.size(); ++i) {
    const T b = s.beta.value()[i];
    if (cfg.gate == GateMode::kSigmoid) r.expect(b > 0 && b < 1, "sigmoid gate outside (0, 1)");
  }
  if (cfg.gate == GateMode::kSoftmax) expect_distribution(r, s.beta, mem.sentence_mask, 1e-6, "softmax gate");
}

template <class T>
void check_source(InvariantReport& r, const SourceEncoding<T>& src) {
  const auto& enc = src.enc;
  for (std::size_t i = 0; i < enc.coatt.size(); ++i) {
    expect_distribution(r, enc.coatt[i].alpha_q, enc.q_mask, 1e-6, "co-attention alpha_q");
    const int w = enc.coatt[i].alpha_s.cols();
    const auto m = std::span<const std::uint8_t>(enc.doc_mask).subspan(i * static_cast<std::size_t>(w), w);
    expect_distribution(r, enc.coatt[i].alpha_s, m, 1e-6, "co-attention alpha_s");
  }
  expect_distribution(r, src.hops.front().scores, enc.sentence_mask, 1e-6, "hop-1 sentence weights");
  for (int i = 0; i < src.agg.alpha.rows(); ++i) {
    double s = 0;
    for (int k = 0; k < src.agg.alpha.cols(); ++k) s += static_cast<double>(src.agg.alpha.at(i, k));
    r.expect(std::abs(s - 1.0) <= 1e-6, "hop attention does not sum to one");
  }
}

// Random configuration toggles and parameter scale for one property draw.
inline Config random_toggles(Config c, std::mt19937_64& rng) {
  c.hops = 1 + static_cast<int>(rng() % 3);
  c.mar_unit = rng() % 2 == 0;
  c.hop_refiner = rng() % 4 != 0;
  c.aggregation = static_cast<Aggregation>(rng() % 3);
  c.gate = rng() % 2 == 0 ? GateMode::kSigmoid : GateMode::kSoftmax;
  c.question_pointer = rng() % 3 != 0;
  c.init_range = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
  c.seed = rng();
  return c;
}

}  // namespace msg::test
