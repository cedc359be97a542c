#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "msg/autograd.hpp"
#include "msg/params.hpp"

namespace msg {

template <class T>
void init_accumulators(ParamStore<T>& store, T init_acc);

// Adaptive-gradient update: accum += g^2; value -= lr * g / sqrt(accum).
// Throws NumericError naming the parameter if any gradient is non-finite;
// the store is left untouched in that case.
template <class T>
void adagrad_step(ParamStore<T>& store, const GradBuffer<T>& grads, T lr);

// Rescales grads so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(GradBuffer<T>& grads, double max_norm);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int checked = 0;
};

using GradCheckClosure = std::function<ad::Var<double>(ad::Graph<double>&)>;

// Compares reverse-mode gradients of a scalar closure with five-point central
// finite differences (step eps), over up to samples_per_param random coordinates of each
// parameter (all coordinates when the parameter is smaller). The relative
// error of one coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(ParamStore<double>& store, const GradCheckClosure& closure, double eps,
                           int samples_per_param = 8, std::uint64_t seed = 1);

}  // namespace msg
