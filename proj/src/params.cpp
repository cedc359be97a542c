#include "msg/params.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include "msg/error.hpp"
#include "msg/kernels.hpp"

namespace msg {

template <class T>
int ParamStore<T>::add(std::string name, int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    throw DimensionError("parameter '" + name + "' has non-positive shape");
  }
  if (by_name_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  const int idx = size();
  Parameter<T> p;
  p.name = name;
  p.rows = rows;
  p.cols = cols;
  p.value.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), T(0));
  p.accum.assign(p.value.size(), T(0));
  params_.push_back(std::move(p));
  by_name_.emplace(std::move(name), idx);
  return idx;
}

template <class T>
int ParamStore<T>::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <class T>
bool ParamStore<T>::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) != 0;
}

template <class T>
std::size_t ParamStore<T>::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <class T>
void ParamStore<T>::init_uniform(double range, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& p : params_) {
    for (auto& v : p.value) v = static_cast<T>(dist(rng));
  }
}

template <class T>
void ParamStore<T>::fill_accumulators(T value) {
  for (auto& p : params_) std::fill(p.accum.begin(), p.accum.end(), value);
}

template <class T>
GradBuffer<T>::GradBuffer(const ParamStore<T>& store) {
  reset(store);
}

template <class T>
void GradBuffer<T>::reset(const ParamStore<T>& store) {
  sizes_.assign(static_cast<std::size_t>(store.size()), 0);
  grads_.assign(static_cast<std::size_t>(store.size()), {});
  for (int i = 0; i < store.size(); ++i) sizes_[static_cast<std::size_t>(i)] = store[i].size();
}

template <class T>
void GradBuffer<T>::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
}

template <class T>
T* GradBuffer<T>::data(int i) {
  auto& g = grads_[static_cast<std::size_t>(i)];
  if (g.empty()) g.assign(sizes_[static_cast<std::size_t>(i)], T(0));
  return g.data();
}

template <class T>
void GradBuffer<T>::accumulate(const GradBuffer& other, T scale) {
  for (int i = 0; i < size(); ++i) {
    if (!other.allocated(i)) continue;
    T* dst = data(i);
    const auto& src = other.grad(i);
    kernels::axpy<T>(scale, std::span<const T>(src), std::span<T>(dst, src.size()));
  }
}

template <class T>
void GradBuffer<T>::scale(T factor) {
  for (auto& g : grads_) {
    for (auto& v : g) v *= factor;
  }
}

template <class T>
double GradBuffer<T>::squared_norm() const {
  double s = 0.0;
  for (const auto& g : grads_) {
    for (T v : g) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return s;
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'G', 'C', 'K', 'P', 'T', '\0'};

template <class V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class V>
V get(std::istream& is, const std::string& path) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("truncated checkpoint '" + path + "'");
  return v;
}

std::string get_string(std::istream& is, const std::string& path) {
  const auto n = get<std::uint32_t>(is, path);
  if (n > (1u << 24)) throw DataError("corrupt string length in checkpoint '" + path + "'");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("truncated checkpoint '" + path + "'");
  return s;
}

template <class Stored, class T>
void read_values(std::istream& is, const std::string& path, std::vector<T>& out) {
  std::vector<Stored> tmp(out.size());
  is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(Stored)));
  if (!is) throw DataError("truncated checkpoint '" + path + "'");
  for (std::size_t i = 0; i < tmp.size(); ++i) out[i] = static_cast<T>(tmp[i]);
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const CheckpointMeta& meta) {
  const std::string tmp_path = path + ".tmp";
  {
    std::ofstream os(tmp_path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + tmp_path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    put(os, kCheckpointVersion);
    put(os, static_cast<std::uint32_t>(sizeof(T)));
    put(os, static_cast<std::uint32_t>(meta.entries.size()));
    for (const auto& [k, v] : meta.entries) {
      put_string(os, k);
      put_string(os, v);
    }
    put(os, static_cast<std::uint32_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
      const auto& p = store[i];
      put_string(os, p.name);
      put(os, static_cast<std::int32_t>(p.rows));
      put(os, static_cast<std::int32_t>(p.cols));
      os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
      os.write(reinterpret_cast<const char*>(p.accum.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
    }
    if (!os) throw DataError("failed writing checkpoint '" + tmp_path + "'");
  }
  if (std::rename(tmp_path.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move checkpoint into place at '" + path + "'");
  }
}

template <class T>
ParamStore<T> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path + "' is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in '" + path + "'");
  }
  const auto width = get<std::uint32_t>(is, path);
  if (width != 4 && width != 8) throw DataError("unsupported value width in '" + path + "'");
  const auto n_meta = get<std::uint32_t>(is, path);
  CheckpointMeta m;
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_string(is, path);
    m.entries[k] = get_string(is, path);
  }
  ParamStore<T> store;
  const auto n_params = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = get_string(is, path);
    const auto rows = get<std::int32_t>(is, path);
    const auto cols = get<std::int32_t>(is, path);
    const int idx = store.add(name, rows, cols);
    auto& p = store[idx];
    if (width == 4) {
      read_values<float>(is, path, p.value);
      read_values<float>(is, path, p.accum);
    } else {
      read_values<double>(is, path, p.value);
      read_values<double>(is, path, p.accum);
    }
  }
  if (meta != nullptr) *meta = std::move(m);
  return store;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class GradBuffer<float>;
template class GradBuffer<double>;
template void save_checkpoint<float>(const std::string&, const ParamStore<float>&, const CheckpointMeta&);
template void save_checkpoint<double>(const std::string&, const ParamStore<double>&, const CheckpointMeta&);
template ParamStore<float> load_checkpoint<float>(const std::string&, CheckpointMeta*);
template ParamStore<double> load_checkpoint<double>(const std::string&, CheckpointMeta*);

}  // namespace msg
