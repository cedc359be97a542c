#include "msg/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msg::kernels {
namespace {

// One output row of C. Shared by the serial and OpenMP paths so that both
// perform the exact same floating-point operations per element.
template <class T>
inline void gemm_row(const GemmArgs& g, const T* a, const T* b, T beta, T* c, std::size_t i) {
  T* crow = c + i * g.n;
  if (beta == T(0)) {
    for (std::size_t j = 0; j < g.n; ++j) crow[j] = T(0);
  } else if (beta != T(1)) {
    for (std::size_t j = 0; j < g.n; ++j) crow[j] *= beta;
  }
  auto a_at = [&](std::size_t p) { return g.trans_a ? a[p * g.m + i] : a[i * g.k + p]; };
  if (!g.trans_b) {
    for (std::size_t p = 0; p < g.k; ++p) {
      const T av = a_at(p);
      const T* brow = b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const T* bcol = b + j * g.k;
      T sum = T(0);
      for (std::size_t p = 0; p < g.k; ++p) sum += a_at(p) * bcol[p];
      crow[j] += sum;
    }
  }
}

template <class T>
inline void adagrad_one(T& p, T& acc, T g, T lr) {
  acc += g * g;
  p -= lr * g / std::sqrt(acc);
}

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return true;
#endif
}

}  // namespace

namespace serial {

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c) {
  for (std::size_t i = 0; i < args.m; ++i) gemm_row(args, a, b, beta, c, i);
}

template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr) {
  for (std::size_t i = 0; i < param.size(); ++i) adagrad_one(param[i], accum[i], grad[i], lr);
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace serial

namespace parallel {

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c) {
  const auto m = static_cast<long long>(args.m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < m; ++i) gemm_row(args, a, b, beta, c, static_cast<std::size_t>(i));
}

template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr) {
  const auto n = static_cast<long long>(param.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) adagrad_one(param[i], accum[i], grad[i], lr);
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  const auto n = static_cast<long long>(x.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace parallel

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c) {
  if (args.m > 1 && args.m * args.n * args.k >= kGemmParallelWork && !in_parallel()) {
    parallel::gemm(args, a, b, beta, c);
  } else {
    serial::gemm(args, a, b, beta, c);
  }
}

template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr) {
  if (param.size() >= kVectorParallelWork && !in_parallel()) {
    parallel::adagrad_update(param, accum, grad, lr);
  } else {
    serial::adagrad_update(param, accum, grad, lr);
  }
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  if (x.size() >= kVectorParallelWork && !in_parallel()) {
    parallel::axpy(alpha, x, y);
  } else {
    serial::axpy(alpha, x, y);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define MSG_INSTANTIATE_KERNELS(T)                                                              \
  template void serial::gemm<T>(const GemmArgs&, const T*, const T*, T, T*);                  \
  template void parallel::gemm<T>(const GemmArgs&, const T*, const T*, T, T*);                \
  template void gemm<T>(const GemmArgs&, const T*, const T*, T, T*);                          \
  template void serial::adagrad_update<T>(std::span<T>, std::span<T>, std::span<const T>, T);  \
  template void parallel::adagrad_update<T>(std::span<T>, std::span<T>, std::span<const T>, T); \
  template void adagrad_update<T>(std::span<T>, std::span<T>, std::span<const T>, T);          \
  template void serial::axpy<T>(T, std::span<const T>, std::span<T>);                          \
  template void parallel::axpy<T>(T, std::span<const T>, std::span<T>);                        \
  template void axpy<T>(T, std::span<const T>, std::span<T>);

MSG_INSTANTIATE_KERNELS(float)
MSG_INSTANTIATE_KERNELS(double)

#undef MSG_INSTANTIATE_KERNELS

}  // namespace msg::kernels
