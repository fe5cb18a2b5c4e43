#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "affordsplat/core/params.hpp"

namespace affordsplat::harness {

using core::ParameterStore;
using core::Tensor;

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Only trainable parameters are updated; state
// is keyed by parameter name so freezes can change between stages.
template <typename S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(ParameterStore<S>& ps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps.at(i);
      if (!p.trainable) continue;
      auto& st = state_[p.name];
      if (st.m.numel() != p.value.numel()) {
        st.m = Tensor<S>(p.value.shape());
        st.v = Tensor<S>(p.value.shape());
      }
      for (std::int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = (double)p.grad[j];
        const double m = cfg_.beta1 * (double)st.m[j] + (1 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * (double)st.v[j] + (1 - cfg_.beta2) * g * g;
        st.m[j] = (S)m;
        st.v[j] = (S)v;
        const double mh = m / bc1;
        const double vh = v / bc2;
        p.value[j] = (S)((double)p.value[j] -
                         cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                                    cfg_.weight_decay * (double)p.value[j]));
      }
    }
  }

 private:
  struct State {
    Tensor<S> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
  std::int64_t t_ = 0;
};

}  // namespace affordsplat::harness
