#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qacts/util.hpp"

namespace qacts {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::vector<size_t> strides_of(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// When enabled, every op output is scanned for NaN/Inf and construction of
// non-finite tensors raises. Off by default: the scan is pure overhead in
// the training hot path.
inline bool& debug_checks() {
  static bool enabled = false;
  return enabled;
}

// Dense row-major f64 tensor. Immutable after construction by convention,
// except for gradient accumulation.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty means "not populated"

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0, bool rg = false)
      : shape(std::move(s)), data(numel(shape), fill), requires_grad(rg) {}

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t dim(size_t axis) const { return shape.at(axis); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
  void clear_grad() { grad.clear(); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw Error(std::string("non-finite value in tensor from ") + where);
    }
  }
}

inline TensorPtr tensor(Shape shape, double fill = 0.0, bool requires_grad = false) {
  auto t = std::make_shared<Tensor>(std::move(shape), fill, requires_grad);
  if (debug_checks()) check_finite(*t, "tensor()");
  return t;
}

inline TensorPtr tensor_of(Shape shape, std::vector<double> values, bool requires_grad = false) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor_of: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  if (debug_checks()) check_finite(*t, "tensor_of()");
  return t;
}

inline TensorPtr scalar(double v, bool requires_grad = false) {
  return tensor_of({1}, {v}, requires_grad);
}

}  // namespace qacts
