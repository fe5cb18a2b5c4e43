#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "affordsplat/core/rng.hpp"
#include "affordsplat/core/tape.hpp"
#include "affordsplat/core/tensor.hpp"

namespace affordsplat::core {

// Owns all trainable state of a model. Parameters keep stable addresses
// (unique_ptr storage) and a deterministic iteration order (insertion order).
template <typename S>
class ParameterStore {
 public:
  Parameter<S>& add(const std::string& name, Tensor<S> value,
                    bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = std::move(value);
    p->trainable = trainable;
    p->zero_grad();
    items_.push_back(std::move(p));
    index_[name] = items_.size() - 1;
    return *items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name); }

  Parameter<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return *items_[it->second];
  }
  const Parameter<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return *items_[it->second];
  }

  std::size_t size() const { return items_.size(); }
  Parameter<S>& at(std::size_t i) { return *items_[i]; }
  const Parameter<S>& at(std::size_t i) const { return *items_[i]; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
  }

  // Freeze/unfreeze by name prefix; returns the number of parameters touched.
  int set_trainable_by_prefix(const std::string& prefix, bool trainable) {
    int count = 0;
    for (auto& p : items_)
      if (p->name.rfind(prefix, 0) == 0) {
        p->trainable = trainable;
        ++count;
      }
    return count;
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> items_;
  std::map<std::string, std::size_t> index_;
};

template <typename S>
Tensor<S> glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out,
                         Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<S> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>(rng.uniform(-a, a));
  return t;
}

template <typename S>
Tensor<S> normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace affordsplat::core
