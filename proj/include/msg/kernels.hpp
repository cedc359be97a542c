#pragma once

#include <cstddef>
#include <span>

// Dense kernels used by the autodiff tape and the optimiser.
//
// Every kernel has a serial reference and an OpenMP version. Both visit the
// reduction dimension in the same order for each output element, so their
// results are bitwise identical; the parallel split is only over independent
// outputs. The dispatching entry points at the bottom choose the OpenMP path
// when the work is large enough and we are not already inside a parallel
// region.

namespace msg::kernels {

// Row-major C[m x n] = beta * C + op(A)[m x k] * op(B)[k x n].
// op(A) is A or A^T depending on trans_a; A is stored as (trans_a ? k x m : m x k).
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

namespace serial {

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c);

// acc += g^2; p -= lr * g / sqrt(acc)
template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr);

// y += alpha * x
template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

}  // namespace serial

namespace parallel {

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c);

template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr);

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

}  // namespace parallel

// Work thresholds (multiply-adds / elements) above which dispatch goes parallel.
inline constexpr std::size_t kGemmParallelWork = std::size_t{1} << 18;
inline constexpr std::size_t kVectorParallelWork = std::size_t{1} << 16;

template <class T>
void gemm(const GemmArgs& args, const T* a, const T* b, T beta, T* c);

template <class T>
void adagrad_update(std::span<T> param, std::span<T> accum, std::span<const T> grad, T lr);

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace msg::kernels
