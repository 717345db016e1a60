#pragma once

#include <cmath>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "qacts/tensor.hpp"

namespace qacts {

struct ParamEntry {
  std::string name;
  TensorPtr tensor;
};

// Ordered named parameter set. Update order follows insertion order, which
// keeps optimizer arithmetic deterministic.
using ParamList = std::vector<ParamEntry>;

inline TensorPtr find_param(const ParamList& params, const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  return nullptr;
}

inline void zero_grads(ParamList& params) {
  for (auto& p : params) p.tensor->clear_grad();
}

// Marks parameters so the optimizer skips them entirely; their bytes stay
// untouched under any number of steps.
inline void freeze(const ParamList& params, const std::vector<std::string>& names,
                   std::set<std::string>& frozen) {
  for (const auto& n : names) {
    if (!find_param(params, n)) throw ValidationError("freeze: unknown parameter " + n);
    frozen.insert(n);
  }
}

inline void unfreeze(const ParamList& params, const std::vector<std::string>& names,
                     std::set<std::string>& frozen) {
  for (const auto& n : names) {
    if (!find_param(params, n)) throw ValidationError("unfreeze: unknown parameter " + n);
    frozen.erase(n);
  }
}

// Adam with bias correction. Moment state and the timestep are tracked per
// parameter name; a parameter only advances its timestep on steps where it
// actually receives an update, so freeze/unfreeze cycles stay well defined.
class Adam {
 public:
  explicit Adam(double lr = 5e-5, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(ParamList& params, const std::set<std::string>& frozen = {}) {
    for (auto& p : params) {
      if (frozen.count(p.name)) continue;
      Tensor& t = *p.tensor;
      if (t.grad.empty()) continue;  // no gradient reached this parameter
      if (t.grad.size() != t.data.size()) {
        throw ShapeError("adam: grad/param size mismatch for " + p.name);
      }
      Slot& s = slots_[p.name];
      if (s.m.empty()) {
        s.m.assign(t.data.size(), 0.0);
        s.v.assign(t.data.size(), 0.0);
      }
      s.t += 1;
      double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
      double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
      for (size_t i = 0; i < t.data.size(); ++i) {
        double g = t.grad[i];
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
        double mhat = s.m[i] / bc1;
        double vhat = s.v[i] / bc2;
        t.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  struct Slot {
    std::vector<double> m, v;
    uint64_t t = 0;
  };

  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace qacts
