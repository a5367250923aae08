#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "moe_affect/mat.hpp"
#include "moe_affect/rng.hpp"

namespace moe_affect {

/// Named parameter tensors with matching gradient accumulators and AdamW
/// moments. std::map keeps iteration order deterministic.
template <class T>
class ParamStore {
 public:
  struct Entry {
    Mat<T> value;
    Mat<T> grad;
    Mat<T> m;  // first moment
    Mat<T> v;  // second moment
  };

  void add(const std::string& name, Mat<T> value) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Entry e;
    e.grad = Mat<T>(value.rows, value.cols);
    e.m = Mat<T>(value.rows, value.cols);
    e.v = Mat<T>(value.rows, value.cols);
    e.value = std::move(value);
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  Mat<T>& value(const std::string& name) { return at(name).value; }
  const Mat<T>& value(const std::string& name) const { return at(name).value; }
  Mat<T>& grad(const std::string& name) { return at(name).grad; }

  void zero_grads() {
    for (auto& [name, e] : entries_)
      for (T& g : e.grad.a) g = T(0);
  }

  void reset_moments() {
    for (auto& [name, e] : entries_) {
      for (T& x : e.m.a) x = T(0);
      for (T& x : e.v.a) x = T(0);
    }
    step_count_ = 0;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::uint64_t& step_count() { return step_count_; }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (auto& [name, e] : entries_) out.add(name, e.value.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
  std::uint64_t step_count_ = 0;  // AdamW bias-correction step
};

/// Uniform Xavier/Glorot init over [-sqrt(6/(fan_in+fan_out)), +...].
template <class T>
Mat<T> xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat<T> w(rows, cols);
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (T& v : w.a) v = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

template <class T>
Mat<T> gaussian_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Mat<T> w(rows, cols);
  for (T& v : w.a) v = static_cast<T>(rng.normal(0.0, stddev));
  return w;
}

}  // namespace moe_affect
