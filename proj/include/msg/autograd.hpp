#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msg/params.hpp"

// Tape-based reverse-mode differentiation over 2-D dense matrices.
//
// A Graph records nodes in creation order, so reverse creation order is a
// valid topological order for the backward sweep. Vectors are 1 x n or n x 1
// matrices; scalars are 1 x 1. Parameters enter the graph as leaves that read
// straight from a ParamStore and write their gradients into a GradBuffer.

namespace msg::ad {

using Mask = std::vector<std::uint8_t>;

template <class T>
class Graph;

template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
  std::size_t size() const { return static_cast<std::size_t>(rows()) * static_cast<std::size_t>(cols()); }
  std::span<const T> value() const;
  T at(int r, int c) const { return value()[static_cast<std::size_t>(r * cols() + c)]; }
  T item() const;
  // Gradient after Graph::backward; empty if nothing flowed into this node.
  std::span<const T> grad() const;
  bool requires_grad() const;
};

std::string shape_string(int rows, int cols);

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  explicit Graph(const ParamStore<T>* params = nullptr, GradBuffer<T>* sink = nullptr);

  Var<T> constant(int rows, int cols, std::vector<T> values);
  Var<T> zeros(int rows, int cols);
  Var<T> scalar(T v) { return constant(1, 1, {v}); }
  // Differentiable leaf owning its value; its gradient stays on the node.
  Var<T> leaf(int rows, int cols, std::vector<T> values);
  // Leaf bound to a stored parameter. Repeated calls return the same node.
  Var<T> param(int index);
  Var<T> param(std::string_view name);

  void backward(Var<T> root);

  int rows(int id) const { return nodes_[static_cast<std::size_t>(id)].rows; }
  int cols(int id) const { return nodes_[static_cast<std::size_t>(id)].cols; }
  std::span<const T> value(int id) const;
  std::span<const T> grad_view(int id) const;
  // Mutable gradient storage, allocating zeros on first use.
  std::span<T> grad(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Appends an operation result. Backward is dropped when no input needs it.
  Var<T> push(int rows, int cols, std::vector<T> value, bool requires_grad, Backward backward);

  const ParamStore<T>* params() const { return params_; }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    const T* external_value = nullptr;
    std::vector<T> grad;
    T* external_grad = nullptr;
    int param_index = -1;
    bool requires_grad = false;
    Backward backward;
  };

  const ParamStore<T>* params_;
  GradBuffer<T>* sink_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

// Which end of a softmax/max group to report when every element is masked.
enum class EmptyGroup { kError, kZero };

// --- linear algebra -------------------------------------------------------
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false);
template <class T>
Var<T> transpose(Var<T> a);

// --- elementwise ----------------------------------------------------------
template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> minimum(Var<T> a, Var<T> b);
// a (r x c) + row (1 x c) broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row);
// Every row i of a scaled by v(i); v is r x 1.
template <class T>
Var<T> scale_rows(Var<T> a, Var<T> v);
template <class T>
Var<T> scale(Var<T> a, T factor);
template <class T>
Var<T> mul_scalar(Var<T> a, Var<T> s);
template <class T>
Var<T> div_scalar(Var<T> a, Var<T> s);
template <class T>
Var<T> tanh(Var<T> a);
template <class T>
Var<T> sigmoid(Var<T> a);
template <class T>
Var<T> exp(Var<T> a);
// log(max(a, floor)); no gradient where the floor is active.
template <class T>
Var<T> log_clamped(Var<T> a, T floor);
// Subgradient +1 at zero.
template <class T>
Var<T> abs(Var<T> a);

// --- reductions -----------------------------------------------------------
template <class T>
Var<T> sum(Var<T> a);
// axis 1: normalise within each row; axis 0: within each column. Masked
// entries are exactly zero.
template <class T>
Var<T> masked_softmax(Var<T> logits, std::span<const std::uint8_t> mask, int axis,
                      EmptyGroup empty = EmptyGroup::kError);
template <class T>
Var<T> softmax(Var<T> logits, int axis);
// axis 1 -> r x 1 (max of each row); axis 0 -> 1 x c (max of each column).
template <class T>
Var<T> masked_max(Var<T> a, std::span<const std::uint8_t> mask, int axis,
                  EmptyGroup empty = EmptyGroup::kError);

// --- structure ------------------------------------------------------------
template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts);
template <class T>
Var<T> slice_rows(Var<T> a, int begin, int count);
template <class T>
Var<T> slice_cols(Var<T> a, int begin, int count);
template <class T>
Var<T> gather_rows(Var<T> a, std::span<const int> rows);
// v (n x 1 or 1 x n) scattered into a 1 x size row: out[ids[i]] += v[i].
template <class T>
Var<T> scatter_add(Var<T> v, std::span<const int> ids, int size);
// Flat element a[index] as 1 x 1.
template <class T>
Var<T> pick(Var<T> a, int index);
// Appends zero columns up to cols.
template <class T>
Var<T> pad_cols(Var<T> a, int cols);
// Row-wise select: mask(i) ? a(i,:) : b(i,:).
template <class T>
Var<T> blend_rows(Var<T> a, Var<T> b, std::span<const std::uint8_t> row_mask);

// Inverted dropout with a fresh Bernoulli mask from rng; identity when rate == 0.
template <class T>
Var<T> dropout(Var<T> a, double rate, std::mt19937_64& rng);

// --- recurrent cells ------------------------------------------------------
// Weights of one LSTM direction. Gate order in the 4H block is i, f, g, o.
template <class T>
struct LstmWeights {
  Var<T> input;      // in x 4H
  Var<T> recurrent;  // H x 4H
  Var<T> bias;       // 1 x 4H
};

// Fused cell nonlinearity: pre (r x 4H), c_prev (r x H) -> [h | c] (r x 2H).
template <class T>
Var<T> lstm_cell(Var<T> pre, Var<T> c_prev);

template <class T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

// One step for a batch of rows: x (r x in), state (r x H each).
template <class T>
LstmState<T> lstm_step(Var<T> x, const LstmState<T>& prev, const LstmWeights<T>& w);

}  // namespace msg::ad
