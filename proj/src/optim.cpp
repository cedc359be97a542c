#include "msg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msg/error.hpp"
#include "msg/kernels.hpp"

namespace msg {

template <class T>
void init_accumulators(ParamStore<T>& store, T init_acc) {
  store.fill_accumulators(init_acc);
}

template <class T>
void adagrad_step(ParamStore<T>& store, const GradBuffer<T>& grads, T lr) {
  for (int i = 0; i < store.size(); ++i) {
    if (!grads.allocated(i)) continue;
    for (T g : grads.grad(i)) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient for parameter '" + store[i].name + "'");
      }
    }
  }
  for (int i = 0; i < store.size(); ++i) {
    if (!grads.allocated(i)) continue;
    auto& p = store[i];
    kernels::adagrad_update<T>(std::span<T>(p.value), std::span<T>(p.accum), std::span<const T>(grads.grad(i)), lr);
  }
}

template <class T>
double clip_grad_norm(GradBuffer<T>& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(static_cast<T>(max_norm / norm));
  return norm;
}

GradCheckResult grad_check(ParamStore<double>& store, const GradCheckClosure& closure, double eps,
                           int samples_per_param, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  GradBuffer<double> analytic(store);
  {
    ad::Graph<double> g(&store, &analytic);
    ad::Var<double> out = closure(g);
    if (!std::isfinite(out.item())) throw NumericError("grad_check: closure returned a non-finite value");
    g.backward(out);
  }
  auto evaluate = [&]() {
    ad::Graph<double> g(&store, nullptr);
    const double v = closure(g).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: closure returned a non-finite value");
    return v;
  };

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (int pi = 0; pi < store.size(); ++pi) {
    auto& p = store[pi];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (static_cast<int>(coords.size()) > samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(samples_per_param));
    }
    for (std::size_t c : coords) {
      const double saved = p.value[c];
      auto at = [&](double offset) {
        p.value[c] = saved + offset;
        return evaluate();
      };
      // five-point central stencil, O(eps^4) truncation error
      const double d1 = at(eps) - at(-eps);
      const double d2 = at(2 * eps) - at(-2 * eps);
      p.value[c] = saved;
      const double numeric = (8.0 * d1 - d2) / (12.0 * eps);
      const double a = analytic.allocated(pi) ? analytic.grad(pi)[c] : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = p.name;
          result.worst_index = c;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

template void init_accumulators<float>(ParamStore<float>&, float);
template void init_accumulators<double>(ParamStore<double>&, double);
template void adagrad_step<float>(ParamStore<float>&, const GradBuffer<float>&, float);
template void adagrad_step<double>(ParamStore<double>&, const GradBuffer<double>&, double);
template double clip_grad_norm<float>(GradBuffer<float>&, double);
template double clip_grad_norm<double>(GradBuffer<double>&, double);

}  // namespace msg
