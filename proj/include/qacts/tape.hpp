#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "qacts/rng.hpp"
#include "qacts/tensor.hpp"

namespace qacts {

namespace detail {

// C += A * B, all row-major. ikj order so the inner loop streams rows of B.
inline void mm_acc(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C += A * B^T where A is (m x k), B is (n x k).
inline void mm_acc_bt(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C += A^T * B where A is (m x k), B is (m x n), C is (k x n).
inline void mm_acc_at(double* c, const double* a, const double* b, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      double av = ai[p];
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // 1/sqrt(2*pi)
  return cdf + x * pdf;
}

}  // namespace detail

// Reverse-mode gradient tape. Operations are recorded in execution order,
// which is by construction a topological order; backward() replays them once
// in reverse, accumulating gradients additively on fan-out. A tape and the
// tensors it connects belong to a single worker.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  size_t num_nodes() const { return nodes_.size(); }

  // -- matmul -----------------------------------------------------------
  // Rank-2: (m,k)x(k,n). Rank-3: leading dim is a shared batch dim.
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != b->rank() || (a->rank() != 2 && a->rank() != 3)) {
      throw ShapeError("matmul: unsupported ranks " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    }
    size_t batch = 1, off = 0;
    if (a->rank() == 3) {
      if (a->shape[0] != b->shape[0]) {
        throw ShapeError("matmul: batch mismatch " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
      }
      batch = a->shape[0];
      off = 1;
    }
    size_t m = a->shape[off], k = a->shape[off + 1];
    if (b->shape[off] != k) {
      throw ShapeError("matmul: inner dimensions disagree " + shape_str(a->shape) + " x " +
                       shape_str(b->shape));
    }
    size_t n = b->shape[off + 1];
    Shape out_shape = (off == 1) ? Shape{batch, m, n} : Shape{m, n};
    auto out = tensor(std::move(out_shape), 0.0, a->requires_grad || b->requires_grad);
    for (size_t bi = 0; bi < batch; ++bi) {
      detail::mm_acc(out->data.data() + bi * m * n, a->data.data() + bi * m * k,
                     b->data.data() + bi * k * n, m, k, n);
    }
    finish(out, "matmul");
    record(out, [a, b, out, batch, m, k, n]() {
      const double* g = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t bi = 0; bi < batch; ++bi) {
          detail::mm_acc_bt(a->grad.data() + bi * m * k, g + bi * m * n,
                            b->data.data() + bi * k * n, m, n, k);
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t bi = 0; bi < batch; ++bi) {
          detail::mm_acc_at(b->grad.data() + bi * k * n, a->data.data() + bi * m * k,
                            g + bi * m * n, m, k, n);
        }
      }
    });
    return out;
  }

  // -- add --------------------------------------------------------------
  // Same shape, or b's shape a suffix of a's (bias/mask patterns).
  TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (!is_suffix(b->shape, a->shape)) {
      throw ShapeError("add: shape " + shape_str(b->shape) + " is not a suffix of " +
                       shape_str(a->shape));
    }
    size_t bn = b->size();
    auto out = tensor(a->shape, 0.0, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i % bn];
    finish(out, "add");
    record(out, [a, b, out, bn]() {
      const double* g = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < out->size(); ++i) b->grad[i % bn] += g[i];
      }
    });
    return out;
  }

  TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
      throw ShapeError("mul: shapes differ " + shape_str(a->shape) + " vs " +
                       shape_str(b->shape));
    }
    auto out = tensor(a->shape, 0.0, a->requires_grad || b->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    finish(out, "mul");
    record(out, [a, b, out]() {
      const double* g = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < b->size(); ++i) b->grad[i] += g[i] * a->data[i];
      }
    });
    return out;
  }

  TensorPtr scale(const TensorPtr& a, double c) {
    auto out = tensor(a->shape, 0.0, a->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
    finish(out, "scale");
    record(out, [a, out, c]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
    return out;
  }

  TensorPtr gelu(const TensorPtr& a) {
    auto out = tensor(a->shape, 0.0, a->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = detail::gelu_fwd(a->data[i]);
    finish(out, "gelu");
    record(out, [a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (size_t i = 0; i < a->size(); ++i) {
        a->grad[i] += out->grad[i] * detail::gelu_grad(a->data[i]);
      }
    });
    return out;
  }

  TensorPtr neg_log(const TensorPtr& a) {
    auto out = tensor(a->shape, 0.0, a->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = -std::log(a->data[i]);
    finish(out, "neg_log");
    record(out, [a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += -out->grad[i] / a->data[i];
    });
    return out;
  }

  TensorPtr sum(const TensorPtr& a) {
    double acc = 0.0;
    for (double v : a->data) acc += v;
    auto out = tensor_of({1}, {acc}, a->requires_grad);
    finish(out, "sum");
    record(out, [a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      double g = out->grad[0];
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g;
    });
    return out;
  }

  // -- softmax ----------------------------------------------------------
  // Max-subtracted along `axis`; output slices sum to 1.
  TensorPtr softmax(const TensorPtr& a, size_t axis) {
    if (axis >= a->rank()) {
      throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(a->shape));
    }
    size_t n = a->shape[axis];
    if (n == 0) throw ShapeError("softmax: empty axis");
    size_t inner = 1, outer = 1;
    for (size_t i = axis + 1; i < a->rank(); ++i) inner *= a->shape[i];
    for (size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    auto out = tensor(a->shape, 0.0, a->requires_grad);
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        size_t base = o * n * inner + in;
        double mx = a->data[base];
        for (size_t t = 1; t < n; ++t) mx = std::max(mx, a->data[base + t * inner]);
        double z = 0.0;
        for (size_t t = 0; t < n; ++t) {
          double e = std::exp(a->data[base + t * inner] - mx);
          out->data[base + t * inner] = e;
          z += e;
        }
        double invz = 1.0 / z;
        for (size_t t = 0; t < n; ++t) out->data[base + t * inner] *= invz;
      }
    }
    finish(out, "softmax");
    record(out, [a, out, n, inner, outer]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      const double* y = out->data.data();
      const double* g = out->grad.data();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
          size_t base = o * n * inner + in;
          double dot = 0.0;
          for (size_t t = 0; t < n; ++t) dot += g[base + t * inner] * y[base + t * inner];
          for (size_t t = 0; t < n; ++t) {
            size_t idx = base + t * inner;
            a->grad[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
    return out;
  }

  // -- layer norm -------------------------------------------------------
  // Normalizes the last axis to zero mean / unit variance, then applies the
  // affine (gain, bias).
  TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                       double eps = 1e-12) {
    if (x->rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    size_t d = x->shape.back();
    if (gain->size() != d || bias->size() != d) {
      throw ShapeError("layer_norm: affine size mismatch, input " + shape_str(x->shape) +
                       " gain " + shape_str(gain->shape) + " bias " + shape_str(bias->shape));
    }
    size_t rows = x->size() / d;
    auto out =
        tensor(x->shape, 0.0, x->requires_grad || gain->requires_grad || bias->requires_grad);
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
      const double* xr = x->data.data() + r * d;
      double mu = 0.0;
      for (size_t j = 0; j < d; ++j) mu += xr[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (size_t j = 0; j < d; ++j) {
        double c = xr[j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double s = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = s;
      double* hr = xhat->data() + r * d;
      double* orow = out->data.data() + r * d;
      for (size_t j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mu) * s;
        orow[j] = gain->data[j] * hr[j] + bias->data[j];
      }
    }
    finish(out, "layer_norm");
    record(out, [x, gain, bias, out, xhat, inv_std, rows, d]() {
      const double* g = out->grad.data();
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
          for (size_t j = 0; j < d; ++j) bias->grad[j] += g[r * d + j];
        }
      }
      if (gain->requires_grad) {
        gain->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
          for (size_t j = 0; j < d; ++j) gain->grad[j] += g[r * d + j] * (*xhat)[r * d + j];
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double dn = static_cast<double>(d);
        for (size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * d;
          const double* hr = xhat->data() + r * d;
          double s = (*inv_std)[r];
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (size_t j = 0; j < d; ++j) {
            double dh = gr[j] * gain->data[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
          }
          mean_dh /= dn;
          mean_dh_h /= dn;
          for (size_t j = 0; j < d; ++j) {
            double dh = gr[j] * gain->data[j];
            x->grad[r * d + j] += s * (dh - mean_dh - hr[j] * mean_dh_h);
          }
        }
      }
    });
    return out;
  }

  // -- permute ----------------------------------------------------------
  TensorPtr permute(const TensorPtr& a, const std::vector<size_t>& axes) {
    if (axes.size() != a->rank()) {
      throw ShapeError("permute: axes count " + std::to_string(axes.size()) +
                       " does not match rank of " + shape_str(a->shape));
    }
    std::vector<bool> seen(a->rank(), false);
    for (size_t ax : axes) {
      if (ax >= a->rank() || seen[ax]) throw ShapeError("permute: axes are not a permutation");
      seen[ax] = true;
    }
    Shape out_shape(a->rank());
    for (size_t k = 0; k < axes.size(); ++k) out_shape[k] = a->shape[axes[k]];
    auto out = tensor(out_shape, 0.0, a->requires_grad);
    auto in_strides = strides_of(a->shape);
    // stride in the input for a unit step along output axis k
    std::vector<size_t> step(axes.size());
    for (size_t k = 0; k < axes.size(); ++k) step[k] = in_strides[axes[k]];
    size_t total = a->size();
    std::vector<size_t> idx(out_shape.size(), 0);
    size_t src = 0;
    for (size_t lin = 0; lin < total; ++lin) {
      out->data[lin] = a->data[src];
      for (size_t k = idx.size(); k-- > 0;) {
        idx[k]++;
        src += step[k];
        if (idx[k] < out_shape[k]) break;
        src -= step[k] * out_shape[k];
        idx[k] = 0;
      }
    }
    finish(out, "permute");
    record(out, [a, out, out_shape, step]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      std::vector<size_t> idx(out_shape.size(), 0);
      size_t src = 0;
      size_t total = out->size();
      for (size_t lin = 0; lin < total; ++lin) {
        a->grad[src] += out->grad[lin];
        for (size_t k = idx.size(); k-- > 0;) {
          idx[k]++;
          src += step[k];
          if (idx[k] < out_shape[k]) break;
          src -= step[k] * out_shape[k];
          idx[k] = 0;
        }
      }
    });
    return out;
  }

  TensorPtr reshape(const TensorPtr& a, Shape shape) {
    if (numel(shape) != a->size()) {
      throw ShapeError("reshape: " + shape_str(a->shape) + " -> " + shape_str(shape) +
                       " changes element count");
    }
    auto out = std::make_shared<Tensor>();
    out->shape = std::move(shape);
    out->data = a->data;
    out->requires_grad = a->requires_grad;
    record(out, [a, out]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
    });
    return out;
  }

  // -- concat -----------------------------------------------------------
  TensorPtr concat(const std::vector<TensorPtr>& parts, size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts[0]->shape;
    if (axis >= ref.size()) {
      throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                       shape_str(ref));
    }
    size_t axis_total = 0;
    bool rg = false;
    for (const auto& p : parts) {
      if (p->rank() != ref.size()) {
        throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " +
                         shape_str(p->shape));
      }
      for (size_t k = 0; k < ref.size(); ++k) {
        if (k != axis && p->shape[k] != ref[k]) {
          throw ShapeError("concat: shapes incompatible off axis: " + shape_str(ref) + " vs " +
                           shape_str(p->shape));
        }
      }
      axis_total += p->shape[axis];
      rg = rg || p->requires_grad;
    }
    Shape out_shape = ref;
    out_shape[axis] = axis_total;
    size_t inner = 1;
    for (size_t k = axis + 1; k < ref.size(); ++k) inner *= ref[k];
    size_t outer = 1;
    for (size_t k = 0; k < axis; ++k) outer *= ref[k];
    auto out = tensor(out_shape, 0.0, rg);
    size_t out_row = axis_total * inner;
    size_t col = 0;
    for (const auto& p : parts) {
      size_t prow = p->shape[axis] * inner;
      for (size_t o = 0; o < outer; ++o) {
        std::copy_n(p->data.data() + o * prow, prow, out->data.data() + o * out_row + col);
      }
      col += prow;
    }
    finish(out, "concat");
    record(out, [parts, out, outer, out_row]() {
      size_t col = 0;
      for (const auto& p : parts) {
        size_t prow = p->size() / outer;
        if (p->requires_grad) {
          p->ensure_grad();
          for (size_t o = 0; o < outer; ++o) {
            const double* g = out->grad.data() + o * out_row + col;
            double* dst = p->grad.data() + o * prow;
            for (size_t i = 0; i < prow; ++i) dst[i] += g[i];
          }
        }
        col += prow;
      }
    });
    return out;
  }

  // -- embedding lookup -------------------------------------------------
  TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids) {
    if (table->rank() != 2) {
      throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table->shape));
    }
    size_t v = table->shape[0], d = table->shape[1];
    auto out = tensor({ids.size(), d}, 0.0, table->requires_grad);
    for (size_t i = 0; i < ids.size(); ++i) {
      int id = ids[i];
      if (id < 0 || static_cast<size_t>(id) >= v) {
        throw ValidationError("embedding id " + std::to_string(id) + " out of range [0," +
                              std::to_string(v) + ")");
      }
      std::copy_n(table->data.data() + static_cast<size_t>(id) * d, d, out->data.data() + i * d);
    }
    finish(out, "embedding_lookup");
    std::vector<int> ids_copy = ids;
    record(out, [table, out, ids_copy, d]() {
      if (!table->requires_grad) return;
      table->ensure_grad();
      for (size_t i = 0; i < ids_copy.size(); ++i) {
        double* dst = table->grad.data() + static_cast<size_t>(ids_copy[i]) * d;
        const double* g = out->grad.data() + i * d;
        for (size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    });
    return out;
  }

  // -- dropout ----------------------------------------------------------
  // Inverted dropout with an explicit RNG. Identity when not training.
  TensorPtr dropout(const TensorPtr& a, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) {
      throw ValidationError("dropout rate must be in [0,1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return a;
    auto mask = std::make_shared<std::vector<double>>(a->size());
    double keep = 1.0 / (1.0 - rate);
    for (size_t i = 0; i < a->size(); ++i) {
      (*mask)[i] = (rng.uniform() < rate) ? 0.0 : keep;
    }
    auto out = tensor(a->shape, 0.0, a->requires_grad);
    for (size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * (*mask)[i];
    finish(out, "dropout");
    record(out, [a, out, mask]() {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * (*mask)[i];
    });
    return out;
  }

  // -- backward ---------------------------------------------------------
  void backward(const TensorPtr& loss) {
    if (loss->size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (nodes_.empty()) throw Error("backward: tape is empty");
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.out->grad.empty()) n.back();
    }
  }

 private:
  struct Node {
    TensorPtr out;
    std::function<void()> back;
  };

  static bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i) {
      if (small[i] != big[off + i]) return false;
    }
    return true;
  }

  void finish(const TensorPtr& out, const char* where) {
    if (debug_checks()) check_finite(*out, where);
  }

  void record(const TensorPtr& out, std::function<void()> back) {
    if (recording_ && out->requires_grad) nodes_.push_back({out, std::move(back)});
  }

  std::vector<Node> nodes_;
  bool recording_;
};

}  // namespace qacts
