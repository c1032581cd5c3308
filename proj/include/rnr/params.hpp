#pragma once

#include <map>
#include <string>

#include "rnr/random.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

// Named parameter registry. Layers hold aliasing copies of the tensors they
// register here, so the store sees every optimizer update. Iteration order is
// the sorted name order, which the checkpoint and optimizer rely on.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    auto [it, inserted] = params_.emplace(name, std::move(t));
    if (!inserted) throw ContractError("duplicate parameter name: " + name);
    it->second.set_requires_grad(true);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::map<std::string, Tensor<T>>& all() { return params_; }
  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

  // Deep copy: fresh storage, same names.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [k, v] : params_) out.add(k, v.clone());
    return out;
  }

  // Copies values from another store with identical structure.
  void load_values(const ParamStore& src) {
    for (auto& [k, v] : params_) {
      const Tensor<T>& s = src.at(k);
      if (s.shape() != v.shape()) throw ShapeError("load_values: shape mismatch for " + k);
      std::copy_n(s.data(), s.size(), v.data());
    }
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

// Initialization helpers; the spec'd defaults for this project.
template <typename T>
void init_uniform_fanin(Tensor<T>& t, int fan_in, Xoshiro256& rng) {
  const double bound = std::sqrt(1.0 / fan_in);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_normal(Tensor<T>& t, double sigma, Xoshiro256& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(sigma * rng.normal());
}

}  // namespace rnr
