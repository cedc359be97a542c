#include "msg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msg/error.hpp"
#include "msg/kernels.hpp"

namespace msg::ad {

std::string shape_string(int rows, int cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <class T>
int Var<T>::rows() const {
  return graph->rows(id);
}
template <class T>
int Var<T>::cols() const {
  return graph->cols(id);
}
template <class T>
std::span<const T> Var<T>::value() const {
  return graph->value(id);
}
template <class T>
T Var<T>::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar " + shape_string(rows(), cols()));
  return value()[0];
}
template <class T>
std::span<const T> Var<T>::grad() const {
  return graph->grad_view(id);
}
template <class T>
bool Var<T>::requires_grad() const {
  return graph->requires_grad(id);
}

template <class T>
Graph<T>::Graph(const ParamStore<T>* params, GradBuffer<T>* sink) : params_(params), sink_(sink) {
  if (params_ != nullptr) param_nodes_.assign(static_cast<std::size_t>(params_->size()), -1);
  nodes_.reserve(1024);
}

template <class T>
Var<T> Graph<T>::push(int rows, int cols, std::vector<T> value, bool requires_grad, Backward backward) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var<T> Graph<T>::constant(int rows, int cols, std::vector<T> values) {
  if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw DimensionError("constant of shape " + shape_string(rows, cols) + " given " +
                         std::to_string(values.size()) + " values");
  }
  return push(rows, cols, std::move(values), false, nullptr);
}

template <class T>
Var<T> Graph<T>::zeros(int rows, int cols) {
  return constant(rows, cols, std::vector<T>(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), T(0)));
}

template <class T>
Var<T> Graph<T>::leaf(int rows, int cols, std::vector<T> values) {
  Var<T> v = constant(rows, cols, std::move(values));
  nodes_.back().requires_grad = true;
  return v;
}

template <class T>
Var<T> Graph<T>::param(int index) {
  if (params_ == nullptr) throw ConfigError("graph has no parameter store");
  auto& slot = param_nodes_.at(static_cast<std::size_t>(index));
  if (slot >= 0) return Var<T>{this, slot};
  const auto& p = (*params_)[index];
  Node n;
  n.rows = p.rows;
  n.cols = p.cols;
  n.external_value = p.value.data();
  n.param_index = index;
  n.requires_grad = sink_ != nullptr;
  if (sink_ != nullptr) n.external_grad = sink_->data(index);
  nodes_.push_back(std::move(n));
  slot = static_cast<int>(nodes_.size()) - 1;
  return Var<T>{this, slot};
}

template <class T>
Var<T> Graph<T>::param(std::string_view name) {
  if (params_ == nullptr) throw ConfigError("graph has no parameter store");
  return param(params_->index(name));
}

template <class T>
std::span<const T> Graph<T>::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::size_t sz = static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
  if (n.external_value != nullptr) return {n.external_value, sz};
  return {n.value.data(), sz};
}

template <class T>
std::span<const T> Graph<T>::grad_view(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::size_t sz = static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
  if (n.external_grad != nullptr) return {n.external_grad, sz};
  return {n.grad.data(), n.grad.size()};
}

template <class T>
std::span<T> Graph<T>::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::size_t sz = static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
  if (n.external_grad != nullptr) return {n.external_grad, sz};
  if (n.grad.empty()) n.grad.assign(sz, T(0));
  return {n.grad.data(), sz};
}

template <class T>
void Graph<T>::backward(Var<T> root) {
  if (root.graph != this) throw Error("backward root belongs to another graph");
  auto seed = grad(root.id);
  std::fill(seed.begin(), seed.end(), T(1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

namespace {

template <class T>
Graph<T>& same_graph(Var<T> a, Var<T> b) {
  if (a.graph == nullptr || a.graph != b.graph) throw Error("operands belong to different graphs");
  return *a.graph;
}

template <class T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                         shape_string(b.rows(), b.cols()));
  }
}

template <class T>
std::vector<T> copy_value(Var<T> a) {
  auto v = a.value();
  return {v.begin(), v.end()};
}

// Shared plumbing for ops whose gradient is elementwise: dx = dy * d(y)/dx.
template <class T, class Fwd, class Deriv>
Var<T> unary_elementwise(Var<T> a, Fwd fwd, Deriv deriv) {
  Graph<T>& g = *a.graph;
  auto av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const int ai = a.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad(), [ai, deriv](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto x = gr.value(ai);
    auto y = gr.value(self);
    auto dx = gr.grad(ai);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
  });
}

// Iterates softmax/max groups: count groups of len elements, element j of
// group q at offset base(q) + j * stride.
struct GroupLayout {
  int groups;
  int len;
  int group_step;
  int stride;
  std::size_t at(int q, int j) const {
    return static_cast<std::size_t>(q) * static_cast<std::size_t>(group_step) +
           static_cast<std::size_t>(j) * static_cast<std::size_t>(stride);
  }
};

GroupLayout layout_for(int rows, int cols, int axis) {
  if (axis == 1) return {rows, cols, cols, 1};
  if (axis == 0) return {cols, rows, 1, cols};
  throw DimensionError("axis must be 0 or 1, got " + std::to_string(axis));
}

void check_mask(std::span<const std::uint8_t> mask, std::size_t size, const char* op) {
  if (!mask.empty() && mask.size() != size) {
    throw DimensionError(std::string(op) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(size) + " values");
  }
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b) {
  Graph<T>& g = same_graph(a, b);
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int kb = trans_b ? b.cols() : b.rows();
  const int n = trans_b ? b.rows() : b.cols();
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.rows(), a.cols()) +
                         (trans_a ? "^T" : "") + " x " + shape_string(b.rows(), b.cols()) + (trans_b ? "^T" : ""));
  }
  std::vector<T> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
  kernels::GemmArgs args{trans_a, trans_b, static_cast<std::size_t>(m), static_cast<std::size_t>(n),
                         static_cast<std::size_t>(k)};
  kernels::gemm<T>(args, a.value().data(), b.value().data(), T(0), out.data());
  const int ai = a.id;
  const int bi = b.id;
  const bool rg = a.requires_grad() || b.requires_grad();
  return g.push(m, n, std::move(out), rg, [=](Graph<T>& gr, int self) {
    const T* dc = gr.grad(self).data();
    const auto um = static_cast<std::size_t>(m);
    const auto un = static_cast<std::size_t>(n);
    const auto uk = static_cast<std::size_t>(k);
    if (gr.requires_grad(ai)) {
      const T* bv = gr.value(bi).data();
      T* da = gr.grad(ai).data();
      if (!trans_a) {
        kernels::gemm<T>({false, !trans_b, um, uk, un}, dc, bv, T(1), da);
      } else {
        kernels::gemm<T>({trans_b, true, uk, um, un}, bv, dc, T(1), da);
      }
    }
    if (gr.requires_grad(bi)) {
      const T* av = gr.value(ai).data();
      T* db = gr.grad(bi).data();
      if (!trans_b) {
        kernels::gemm<T>({!trans_a, false, uk, un, um}, av, dc, T(1), db);
      } else {
        kernels::gemm<T>({true, trans_a, un, uk, um}, dc, av, T(1), db);
      }
    }
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  Graph<T>& g = *a.graph;
  const int r = a.rows();
  const int c = a.cols();
  auto av = a.value();
  std::vector<T> out(av.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j * r + i)] = av[static_cast<std::size_t>(i * c + j)];
  const int ai = a.id;
  return g.push(c, r, std::move(out), a.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(ai);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) dx[static_cast<std::size_t>(i * c + j)] += dy[static_cast<std::size_t>(j * r + i)];
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  require_same_shape(a, b, "add");
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const int ai = a.id;
  const int bi = b.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || b.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  for (int in : {ai, bi}) {
                    if (!gr.requires_grad(in)) continue;
                    auto dx = gr.grad(in);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                  }
                });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  require_same_shape(a, b, "sub");
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.id;
  const int bi = b.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || b.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  if (gr.requires_grad(ai)) {
                    auto dx = gr.grad(ai);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                  }
                  if (gr.requires_grad(bi)) {
                    auto dx = gr.grad(bi);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] -= dy[i];
                  }
                });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  require_same_shape(a, b, "mul");
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.id;
  const int bi = b.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || b.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  if (gr.requires_grad(ai)) {
                    auto x = gr.value(bi);
                    auto dx = gr.grad(ai);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * x[i];
                  }
                  if (gr.requires_grad(bi)) {
                    auto x = gr.value(ai);
                    auto dx = gr.grad(bi);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * x[i];
                  }
                });
}

template <class T>
Var<T> minimum(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  require_same_shape(a, b, "minimum");
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(av[i], bv[i]);
  const int ai = a.id;
  const int bi = b.id;
  // Ties route the gradient to the first operand.
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || b.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  auto x = gr.value(ai);
                  auto y = gr.value(bi);
                  const bool ga = gr.requires_grad(ai);
                  const bool gb = gr.requires_grad(bi);
                  std::span<T> dx = ga ? gr.grad(ai) : std::span<T>{};
                  std::span<T> dz = gb ? gr.grad(bi) : std::span<T>{};
                  for (std::size_t i = 0; i < dy.size(); ++i) {
                    if (x[i] <= y[i]) {
                      if (ga) dx[i] += dy[i];
                    } else if (gb) {
                      dz[i] += dy[i];
                    }
                  }
                });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  Graph<T>& g = same_graph(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: cannot broadcast " + shape_string(row.rows(), row.cols()) + " over " +
                         shape_string(a.rows(), a.cols()));
  }
  const int r = a.rows();
  const int c = a.cols();
  auto av = a.value();
  auto bv = row.value();
  std::vector<T> out(av.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const auto k = static_cast<std::size_t>(i * c + j);
      out[k] = av[k] + bv[static_cast<std::size_t>(j)];
    }
  const int ai = a.id;
  const int bi = row.id;
  return g.push(r, c, std::move(out), a.requires_grad() || row.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    if (gr.requires_grad(ai)) {
      auto dx = gr.grad(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (gr.requires_grad(bi)) {
      auto db = gr.grad(bi);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) db[static_cast<std::size_t>(j)] += dy[static_cast<std::size_t>(i * c + j)];
    }
  });
}

template <class T>
Var<T> scale_rows(Var<T> a, Var<T> v) {
  Graph<T>& g = same_graph(a, v);
  if (v.cols() != 1 || v.rows() != a.rows()) {
    throw DimensionError("scale_rows: factor " + shape_string(v.rows(), v.cols()) + " does not fit " +
                         shape_string(a.rows(), a.cols()));
  }
  const int r = a.rows();
  const int c = a.cols();
  auto av = a.value();
  auto vv = v.value();
  std::vector<T> out(av.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const auto k = static_cast<std::size_t>(i * c + j);
      out[k] = av[k] * vv[static_cast<std::size_t>(i)];
    }
  const int ai = a.id;
  const int vi = v.id;
  return g.push(r, c, std::move(out), a.requires_grad() || v.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    if (gr.requires_grad(ai)) {
      auto f = gr.value(vi);
      auto dx = gr.grad(ai);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const auto k = static_cast<std::size_t>(i * c + j);
          dx[k] += dy[k] * f[static_cast<std::size_t>(i)];
        }
    }
    if (gr.requires_grad(vi)) {
      auto x = gr.value(ai);
      auto dv = gr.grad(vi);
      for (int i = 0; i < r; ++i) {
        T s = T(0);
        for (int j = 0; j < c; ++j) {
          const auto k = static_cast<std::size_t>(i * c + j);
          s += dy[k] * x[k];
        }
        dv[static_cast<std::size_t>(i)] += s;
      }
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  return unary_elementwise<T>(
      a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Var<T> mul_scalar(Var<T> a, Var<T> s) {
  Graph<T>& g = same_graph(a, s);
  if (s.size() != 1) throw DimensionError("mul_scalar: factor is " + shape_string(s.rows(), s.cols()));
  auto av = a.value();
  const T f = s.item();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * f;
  const int ai = a.id;
  const int si = s.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || s.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  if (gr.requires_grad(ai)) {
                    const T fs = gr.value(si)[0];
                    auto dx = gr.grad(ai);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * fs;
                  }
                  if (gr.requires_grad(si)) {
                    auto x = gr.value(ai);
                    T acc = T(0);
                    for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * x[i];
                    gr.grad(si)[0] += acc;
                  }
                });
}

template <class T>
Var<T> div_scalar(Var<T> a, Var<T> s) {
  Graph<T>& g = same_graph(a, s);
  if (s.size() != 1) throw DimensionError("div_scalar: divisor is " + shape_string(s.rows(), s.cols()));
  auto av = a.value();
  const T d = s.item();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / d;
  const int ai = a.id;
  const int si = s.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad() || s.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  const T den = gr.value(si)[0];
                  if (gr.requires_grad(ai)) {
                    auto dx = gr.grad(ai);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] / den;
                  }
                  if (gr.requires_grad(si)) {
                    auto y = gr.value(self);
                    T acc = T(0);
                    for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * y[i];
                    gr.grad(si)[0] -= acc / den;
                  }
                });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return unary_elementwise<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return unary_elementwise<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> exp(Var<T> a) {
  return unary_elementwise<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log_clamped(Var<T> a, T floor) {
  return unary_elementwise<T>(
      a, [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

template <class T>
Var<T> abs(Var<T> a) {
  return unary_elementwise<T>(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x >= T(0) ? T(1) : T(-1); });
}

template <class T>
Var<T> sum(Var<T> a) {
  Graph<T>& g = *a.graph;
  T s = T(0);
  for (T v : a.value()) s += v;
  const int ai = a.id;
  return g.push(1, 1, {s}, a.requires_grad(), [=](Graph<T>& gr, int self) {
    const T d = gr.grad(self)[0];
    auto dx = gr.grad(ai);
    for (auto& x : dx) x += d;
  });
}

template <class T>
Var<T> masked_softmax(Var<T> logits, std::span<const std::uint8_t> mask, int axis, EmptyGroup empty) {
  Graph<T>& g = *logits.graph;
  const GroupLayout lay = layout_for(logits.rows(), logits.cols(), axis);
  check_mask(mask, logits.size(), "masked_softmax");
  auto x = logits.value();
  std::vector<T> out(x.size(), T(0));
  auto live = [&](std::size_t k) { return mask.empty() || mask[k] != 0; };
  for (int q = 0; q < lay.groups; ++q) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (int j = 0; j < lay.len; ++j) {
      const auto k = lay.at(q, j);
      if (!live(k)) continue;
      any = true;
      mx = std::max(mx, x[k]);
    }
    if (!any) {
      if (empty == EmptyGroup::kError) {
        throw DegenerateGroupError("masked_softmax: group " + std::to_string(q) + " of " +
                                   shape_string(logits.rows(), logits.cols()) + " (axis " + std::to_string(axis) +
                                   ") is fully masked");
      }
      continue;
    }
    if (!std::isfinite(static_cast<double>(mx))) {
      throw NumericError("masked_softmax: non-finite logit in group " + std::to_string(q));
    }
    T z = T(0);
    for (int j = 0; j < lay.len; ++j) {
      const auto k = lay.at(q, j);
      if (!live(k)) continue;
      out[k] = std::exp(x[k] - mx);
      z += out[k];
    }
    for (int j = 0; j < lay.len; ++j) out[lay.at(q, j)] /= z;
  }
  const int li = logits.id;
  return g.push(logits.rows(), logits.cols(), std::move(out), logits.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto y = gr.value(self);
    auto dx = gr.grad(li);
    for (int q = 0; q < lay.groups; ++q) {
      T dot = T(0);
      for (int j = 0; j < lay.len; ++j) {
        const auto k = lay.at(q, j);
        dot += y[k] * dy[k];
      }
      for (int j = 0; j < lay.len; ++j) {
        const auto k = lay.at(q, j);
        dx[k] += y[k] * (dy[k] - dot);
      }
    }
  });
}

template <class T>
Var<T> softmax(Var<T> logits, int axis) {
  return masked_softmax<T>(logits, {}, axis);
}

template <class T>
Var<T> masked_max(Var<T> a, std::span<const std::uint8_t> mask, int axis, EmptyGroup empty) {
  Graph<T>& g = *a.graph;
  const GroupLayout lay = layout_for(a.rows(), a.cols(), axis);
  check_mask(mask, a.size(), "masked_max");
  auto x = a.value();
  std::vector<T> out(static_cast<std::size_t>(lay.groups), T(0));
  std::vector<std::ptrdiff_t> arg(static_cast<std::size_t>(lay.groups), -1);
  for (int q = 0; q < lay.groups; ++q) {
    for (int j = 0; j < lay.len; ++j) {
      const auto k = lay.at(q, j);
      if (!mask.empty() && mask[k] == 0) continue;
      auto& best = arg[static_cast<std::size_t>(q)];
      if (best < 0 || x[k] > x[static_cast<std::size_t>(best)]) best = static_cast<std::ptrdiff_t>(k);
    }
    const auto best = arg[static_cast<std::size_t>(q)];
    if (best < 0) {
      if (empty == EmptyGroup::kError) {
        throw DegenerateGroupError("masked_max: group " + std::to_string(q) + " of " +
                                   shape_string(a.rows(), a.cols()) + " is fully masked");
      }
      continue;
    }
    out[static_cast<std::size_t>(q)] = x[static_cast<std::size_t>(best)];
  }
  const int rows = axis == 1 ? lay.groups : 1;
  const int cols = axis == 1 ? 1 : lay.groups;
  const int ai = a.id;
  return g.push(rows, cols, std::move(out), a.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(ai);
    for (std::size_t q = 0; q < arg.size(); ++q) {
      if (arg[q] >= 0) dx[static_cast<std::size_t>(arg[q])] += dy[q];
    }
  });
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Graph<T>& g = *parts[0].graph;
  const int c = parts[0].cols();
  int r = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column count " + std::to_string(p.cols()) + " differs from " +
                           std::to_string(c));
    }
    offsets.push_back(r * c);
    ids.push_back(p.id);
    r += p.rows();
    rg = rg || p.requires_grad();
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(r) * static_cast<std::size_t>(c));
  for (const auto& p : parts) {
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  return g.push(r, c, std::move(out), rg, [ids, offsets](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!gr.requires_grad(ids[i])) continue;
      auto dx = gr.grad(ids[i]);
      const auto off = static_cast<std::size_t>(offsets[i]);
      for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dy[off + k];
    }
  });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Graph<T>& g = *parts[0].graph;
  const int r = parts[0].rows();
  int c = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<int> col_off;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) + " differs from " +
                           std::to_string(r));
    }
    ids.push_back(p.id);
    col_off.push_back(c);
    widths.push_back(p.cols());
    c += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<T> out(static_cast<std::size_t>(r) * static_cast<std::size_t>(c));
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto v = parts[pi].value();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < widths[pi]; ++j)
        out[static_cast<std::size_t>(i * c + col_off[pi] + j)] = v[static_cast<std::size_t>(i * widths[pi] + j)];
  }
  return g.push(r, c, std::move(out), rg, [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      if (!gr.requires_grad(ids[pi])) continue;
      auto dx = gr.grad(ids[pi]);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < widths[pi]; ++j)
          dx[static_cast<std::size_t>(i * widths[pi] + j)] += dy[static_cast<std::size_t>(i * c + col_off[pi] + j)];
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> a, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(a.rows(), a.cols()));
  }
  Graph<T>& g = *a.graph;
  const int c = a.cols();
  auto v = a.value();
  const auto off = static_cast<std::size_t>(begin) * static_cast<std::size_t>(c);
  std::vector<T> out(v.begin() + static_cast<std::ptrdiff_t>(off),
                     v.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(count * c)));
  const int ai = a.id;
  return g.push(count, c, std::move(out), a.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(ai);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[off + k] += dy[k];
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(a.rows(), a.cols()));
  }
  Graph<T>& g = *a.graph;
  const int r = a.rows();
  const int c = a.cols();
  auto v = a.value();
  std::vector<T> out(static_cast<std::size_t>(r) * static_cast<std::size_t>(count));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j)
      out[static_cast<std::size_t>(i * count + j)] = v[static_cast<std::size_t>(i * c + begin + j)];
  const int ai = a.id;
  return g.push(r, count, std::move(out), a.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(ai);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < count; ++j)
        dx[static_cast<std::size_t>(i * c + begin + j)] += dy[static_cast<std::size_t>(i * count + j)];
  });
}

template <class T>
Var<T> gather_rows(Var<T> a, std::span<const int> rows) {
  Graph<T>& g = *a.graph;
  const int c = a.cols();
  auto v = a.value();
  std::vector<int> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[i]) + " outside " +
                           shape_string(a.rows(), a.cols()));
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[i]) * c, c,
                out.begin() + static_cast<std::ptrdiff_t>(i) * c);
  }
  const int ai = a.id;
  const int n = static_cast<int>(idx.size());
  return g.push(n, c, std::move(out), a.requires_grad(),
                [ai, c, idx = std::move(idx)](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  auto dx = gr.grad(ai);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    const auto src = i * static_cast<std::size_t>(c);
                    const auto dst = static_cast<std::size_t>(idx[i]) * static_cast<std::size_t>(c);
                    for (int j = 0; j < c; ++j) dx[dst + static_cast<std::size_t>(j)] += dy[src + static_cast<std::size_t>(j)];
                  }
                });
}

template <class T>
Var<T> scatter_add(Var<T> v, std::span<const int> ids, int size) {
  if (v.rows() != 1 && v.cols() != 1) {
    throw DimensionError("scatter_add: source must be a vector, got " + shape_string(v.rows(), v.cols()));
  }
  if (ids.size() != v.size()) {
    throw DimensionError("scatter_add: " + std::to_string(ids.size()) + " ids for " + std::to_string(v.size()) +
                         " values");
  }
  Graph<T>& g = *v.graph;
  auto x = v.value();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<T> out(static_cast<std::size_t>(size), T(0));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= size) {
      throw DimensionError("scatter_add: id " + std::to_string(idx[i]) + " outside [0, " + std::to_string(size) + ")");
    }
    out[static_cast<std::size_t>(idx[i])] += x[i];
  }
  const int vi = v.id;
  return g.push(1, size, std::move(out), v.requires_grad(), [vi, idx = std::move(idx)](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(vi);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i] += dy[static_cast<std::size_t>(idx[i])];
  });
}

template <class T>
Var<T> pick(Var<T> a, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= a.size()) {
    throw DimensionError("pick: index " + std::to_string(index) + " outside " + shape_string(a.rows(), a.cols()));
  }
  Graph<T>& g = *a.graph;
  const int ai = a.id;
  return g.push(1, 1, {a.value()[static_cast<std::size_t>(index)]}, a.requires_grad(), [=](Graph<T>& gr, int self) {
    gr.grad(ai)[static_cast<std::size_t>(index)] += gr.grad(self)[0];
  });
}

template <class T>
Var<T> pad_cols(Var<T> a, int cols) {
  if (cols < a.cols()) throw DimensionError("pad_cols: cannot shrink " + shape_string(a.rows(), a.cols()));
  if (cols == a.cols()) return a;
  Graph<T>& g = *a.graph;
  const int r = a.rows();
  const int c = a.cols();
  auto v = a.value();
  std::vector<T> out(static_cast<std::size_t>(r) * static_cast<std::size_t>(cols), T(0));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i * cols + j)] = v[static_cast<std::size_t>(i * c + j)];
  const int ai = a.id;
  return g.push(r, cols, std::move(out), a.requires_grad(), [=](Graph<T>& gr, int self) {
    auto dy = gr.grad(self);
    auto dx = gr.grad(ai);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) dx[static_cast<std::size_t>(i * c + j)] += dy[static_cast<std::size_t>(i * cols + j)];
  });
}

template <class T>
Var<T> blend_rows(Var<T> a, Var<T> b, std::span<const std::uint8_t> row_mask) {
  Graph<T>& g = same_graph(a, b);
  require_same_shape(a, b, "blend_rows");
  if (row_mask.size() != static_cast<std::size_t>(a.rows())) {
    throw DimensionError("blend_rows: mask length " + std::to_string(row_mask.size()) + " for " +
                         std::to_string(a.rows()) + " rows");
  }
  const int r = a.rows();
  const int c = a.cols();
  Mask m(row_mask.begin(), row_mask.end());
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(av.size());
  for (int i = 0; i < r; ++i) {
    const auto src = m[static_cast<std::size_t>(i)] ? av : bv;
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i * c + j)] = src[static_cast<std::size_t>(i * c + j)];
  }
  const int ai = a.id;
  const int bi = b.id;
  return g.push(r, c, std::move(out), a.requires_grad() || b.requires_grad(),
                [=, m = std::move(m)](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  for (int i = 0; i < r; ++i) {
                    const int dst = m[static_cast<std::size_t>(i)] ? ai : bi;
                    if (!gr.requires_grad(dst)) continue;
                    auto dx = gr.grad(dst);
                    for (int j = 0; j < c; ++j) dx[static_cast<std::size_t>(i * c + j)] += dy[static_cast<std::size_t>(i * c + j)];
                  }
                });
}

template <class T>
Var<T> dropout(Var<T> a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  Graph<T>& g = *a.graph;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<T> factor(a.size());
  for (auto& f : factor) f = keep(rng) ? keep_scale : T(0);
  auto av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor[i];
  const int ai = a.id;
  return g.push(a.rows(), a.cols(), std::move(out), a.requires_grad(),
                [ai, factor = std::move(factor)](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  auto dx = gr.grad(ai);
                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor[i];
                });
}

template <class T>
Var<T> lstm_cell(Var<T> pre, Var<T> c_prev) {
  Graph<T>& g = same_graph(pre, c_prev);
  const int r = pre.rows();
  const int h = c_prev.cols();
  if (pre.cols() != 4 * h || c_prev.rows() != r) {
    throw DimensionError("lstm_cell: pre-activation " + shape_string(pre.rows(), pre.cols()) +
                         " does not match cell " + shape_string(c_prev.rows(), c_prev.cols()));
  }
  auto sig = [](T x) { return T(1) / (T(1) + std::exp(-x)); };
  auto p = pre.value();
  auto cp = c_prev.value();
  std::vector<T> out(static_cast<std::size_t>(r) * static_cast<std::size_t>(2 * h));
  for (int row = 0; row < r; ++row) {
    const T* pr = p.data() + static_cast<std::size_t>(row) * static_cast<std::size_t>(4 * h);
    T* o = out.data() + static_cast<std::size_t>(row) * static_cast<std::size_t>(2 * h);
    for (int j = 0; j < h; ++j) {
      const T ig = sig(pr[j]);
      const T fg = sig(pr[h + j]);
      const T gg = std::tanh(pr[2 * h + j]);
      const T og = sig(pr[3 * h + j]);
      const T c = fg * cp[static_cast<std::size_t>(row * h + j)] + ig * gg;
      o[h + j] = c;
      o[j] = og * std::tanh(c);
    }
  }
  const int pi = pre.id;
  const int ci = c_prev.id;
  return g.push(r, 2 * h, std::move(out), pre.requires_grad() || c_prev.requires_grad(),
                [=](Graph<T>& gr, int self) {
                  auto dy = gr.grad(self);
                  auto y = gr.value(self);
                  auto pv = gr.value(pi);
                  auto cpv = gr.value(ci);
                  const bool gp = gr.requires_grad(pi);
                  const bool gc = gr.requires_grad(ci);
                  std::span<T> dp = gp ? gr.grad(pi) : std::span<T>{};
                  std::span<T> dcp = gc ? gr.grad(ci) : std::span<T>{};
                  for (int row = 0; row < r; ++row) {
                    const auto pbase = static_cast<std::size_t>(row) * static_cast<std::size_t>(4 * h);
                    const auto ybase = static_cast<std::size_t>(row) * static_cast<std::size_t>(2 * h);
                    for (int j = 0; j < h; ++j) {
                      const auto uj = static_cast<std::size_t>(j);
                      const auto uh = static_cast<std::size_t>(h);
                      const T ig = sig(pv[pbase + uj]);
                      const T fg = sig(pv[pbase + uh + uj]);
                      const T gg = std::tanh(pv[pbase + 2 * uh + uj]);
                      const T og = sig(pv[pbase + 3 * uh + uj]);
                      const T c = y[ybase + uh + uj];
                      const T tc = std::tanh(c);
                      const T dh = dy[ybase + uj];
                      const T dc = dy[ybase + uh + uj] + dh * og * (T(1) - tc * tc);
                      if (gp) {
                        dp[pbase + uj] += dc * gg * ig * (T(1) - ig);
                        dp[pbase + uh + uj] += dc * cpv[static_cast<std::size_t>(row * h + j)] * fg * (T(1) - fg);
                        dp[pbase + 2 * uh + uj] += dc * ig * (T(1) - gg * gg);
                        dp[pbase + 3 * uh + uj] += dh * tc * og * (T(1) - og);
                      }
                      if (gc) dcp[static_cast<std::size_t>(row * h + j)] += dc * fg;
                    }
                  }
                });
}

template <class T>
LstmState<T> lstm_step(Var<T> x, const LstmState<T>& prev, const LstmWeights<T>& w) {
  const int h = prev.h.cols();
  if (w.recurrent.rows() != h || w.recurrent.cols() != 4 * h) {
    throw DimensionError("lstm_step: recurrent weights " + shape_string(w.recurrent.rows(), w.recurrent.cols()) +
                         " do not match hidden size " + std::to_string(h));
  }
  Var<T> pre = add_row(add(matmul(x, w.input), matmul(prev.h, w.recurrent)), w.bias);
  Var<T> hc = lstm_cell(pre, prev.c);
  return {slice_cols(hc, 0, h), slice_cols(hc, h, h)};
}

#define MSG_INSTANTIATE_AD(T)                                                                          \
  template struct Var<T>;                                                                              \
  template class Graph<T>;                                                                             \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool, bool);                                               \
  template Var<T> transpose<T>(Var<T>);                                                                \
  template Var<T> add<T>(Var<T>, Var<T>);                                                              \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                              \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                              \
  template Var<T> minimum<T>(Var<T>, Var<T>);                                                          \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                          \
  template Var<T> scale_rows<T>(Var<T>, Var<T>);                                                       \
  template Var<T> scale<T>(Var<T>, T);                                                                 \
  template Var<T> mul_scalar<T>(Var<T>, Var<T>);                                                       \
  template Var<T> div_scalar<T>(Var<T>, Var<T>);                                                       \
  template Var<T> tanh<T>(Var<T>);                                                                     \
  template Var<T> sigmoid<T>(Var<T>);                                                                  \
  template Var<T> exp<T>(Var<T>);                                                                      \
  template Var<T> log_clamped<T>(Var<T>, T);                                                           \
  template Var<T> abs<T>(Var<T>);                                                                      \
  template Var<T> sum<T>(Var<T>);                                                                      \
  template Var<T> masked_softmax<T>(Var<T>, std::span<const std::uint8_t>, int, EmptyGroup);          \
  template Var<T> softmax<T>(Var<T>, int);                                                             \
  template Var<T> masked_max<T>(Var<T>, std::span<const std::uint8_t>, int, EmptyGroup);              \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                             \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                             \
  template Var<T> slice_rows<T>(Var<T>, int, int);                                                     \
  template Var<T> slice_cols<T>(Var<T>, int, int);                                                     \
  template Var<T> gather_rows<T>(Var<T>, std::span<const int>);                                        \
  template Var<T> scatter_add<T>(Var<T>, std::span<const int>, int);                                   \
  template Var<T> pick<T>(Var<T>, int);                                                                \
  template Var<T> pad_cols<T>(Var<T>, int);                                                            \
  template Var<T> blend_rows<T>(Var<T>, Var<T>, std::span<const std::uint8_t>);                        \
  template Var<T> dropout<T>(Var<T>, double, std::mt19937_64&);                                        \
  template Var<T> lstm_cell<T>(Var<T>, Var<T>);                                                        \
  template LstmState<T> lstm_step<T>(Var<T>, const LstmState<T>&, const LstmWeights<T>&);

MSG_INSTANTIATE_AD(float)
MSG_INSTANTIATE_AD(double)

#undef MSG_INSTANTIATE_AD

}  // namespace msg::ad
