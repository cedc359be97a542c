#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msg {

// A named learned matrix together with its adaptive-gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> accum;

  std::size_t size() const { return value.size(); }
};

// Owns every learned parameter of a model. Parameters keep their insertion
// order, which is also the order used for checkpoints and gradient sweeps.
template <class T>
class ParamStore {
 public:
  int add(std::string name, int rows, int cols);

  int index(std::string_view name) const;
  bool contains(std::string_view name) const;

  Parameter<T>& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter<T>& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  Parameter<T>& operator[](std::string_view name) { return (*this)[index(name)]; }
  const Parameter<T>& operator[](std::string_view name) const { return (*this)[index(name)]; }

  int size() const { return static_cast<int>(params_.size()); }
  std::size_t total_values() const;

  // Every value drawn from U[-range, range] in insertion order.
  void init_uniform(double range, std::uint64_t seed);
  void fill_accumulators(T value);

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      const int i = out.add(p.name, p.rows, p.cols);
      auto& q = out[i];
      q.value.assign(p.value.begin(), p.value.end());
      q.accum.assign(p.accum.begin(), p.accum.end());
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, int> by_name_;
};

// Gradient accumulators shaped like a ParamStore. Storage for a parameter is
// only allocated once something writes into it.
template <class T>
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore<T>& store);

  void reset(const ParamStore<T>& store);
  void zero();

  // Dense gradient for parameter i, allocating (zeroed) on first use.
  T* data(int i);
  bool allocated(int i) const { return !grads_[static_cast<std::size_t>(i)].empty(); }
  const std::vector<T>& grad(int i) const { return grads_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(grads_.size()); }

  // this += scale * other
  void accumulate(const GradBuffer& other, T scale = T(1));
  void scale(T factor);
  double squared_norm() const;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::vector<T>> grads_;
};

// Checkpoint file: a versioned binary container holding every parameter
// (name, shape, values, accumulators) plus free-form string metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::map<std::string, std::string> entries;
};

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const CheckpointMeta& meta);

// Loads values of any stored precision, converting to T.
template <class T>
ParamStore<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace msg
