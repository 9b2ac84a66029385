#pragma once

// Dense double-precision tensors and a reverse-mode tape covering every
// primitive the TCN-AA model needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcnaa/rng.hpp"

namespace tcnaa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major dense array. A default-constructed tensor is the scalar 0.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in creation order. Since inputs always precede their
/// outputs, walking the record backwards from the root is a topological
/// traversal of the computation DAG and visits each node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }
  Var parameter(Tensor value) { return push(std::move(value), true, {}, nullptr); }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw std::invalid_argument("operands recorded on different tapes");
      needs = needs || nodes_[v.id()].requires_grad;
      ids.push_back(v.id());
    }
    return push(std::move(value), needs, std::move(ids), needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator for node `id`, or nullptr if it does not need one.
  Tensor* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return &n.grad;
  }

  void backward(const Var& root) {
    if (&root.tape() != this) throw std::invalid_argument("backward root belongs to another tape");
    Node& r = nodes_[root.id()];
    if (r.value.size() != 1)
      throw ShapeError("backward root must be a scalar, got shape " + shape_str(r.value.shape()));
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!r.requires_grad) return;
    r.grad = Tensor(r.value.shape(), 1.0);
    r.has_grad = true;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Id the next recorded node will receive.
  std::size_t next_id() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), false, requires_grad, std::move(inputs),
                          std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    for (std::size_t id : {ia, ib})
      if (Tensor* s = t.grad_sink(id))
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    if (Tensor* s = t.grad_sink(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] -= g[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* s = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * bv[i];
    if (Tensor* s = t.grad_sink(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * factor;
  });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    if (Tensor* s = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) (*s)[i] += g[i];
  });
}

/// Sum of all entries, as a rank-0 tensor.
inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(acc), {a}, [ia](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ia))
      for (double& v : s->values()) v += g[0];
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when not training.
inline Var dropout(const Var& a, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.shape());
  for (double& m : mask.values()) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, mask = std::move(mask)](Tape& t, const Tensor& g) {
                           if (Tensor* s = t.grad_sink(ia))
                             for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * mask[i];
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (M, K) x (K, N) -> (M, N)
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out(Shape{m, n});
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &ov[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, const Tensor& g) {
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    const auto& gv = g.values();
    if (Tensor* s = t.grad_sink(ia)) {
      auto& sv = s->values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gv[i * n + j] * bv[p * n + j];
          sv[i * k + p] += acc;
        }
    }
    if (Tensor* s = t.grad_sink(ib)) {
      auto& sv = s->values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double a_ip = av[i * k + p];
          if (a_ip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) sv[p * n + j] += a_ip * gv[i * n + j];
        }
    }
  });
}

/// (M, K) x (N, K)^T -> (M, N)
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  Tensor out(Shape{m, n});
  const auto& av = a.value().values();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, const Tensor& g) {
    const auto& av = t.value(ia).values();
    const auto& bv = t.value(ib).values();
    const auto& gv = g.values();
    if (Tensor* s = t.grad_sink(ia)) {
      auto& sv = s->values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = gv[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) sv[i * k + p] += gij * bv[j * k + p];
        }
    }
    if (Tensor* s = t.grad_sink(ib)) {
      auto& sv = s->values();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = gv[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) sv[j * k + p] += gij * av[i * k + p];
        }
    }
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  const auto& av = a.value().values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, m, n](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ia))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*s)[i * n + j] += g[j * m + i];
  });
}

/// Affine map over the trailing axis: x (..., F_in), weight (F_out, F_in),
/// optional bias (F_out).
inline Var linear(const Var& x, const Var& weight, const Var* bias = nullptr) {
  detail::require_rank(weight, 2, "linear");
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("linear: input must have at least one axis");
  const std::size_t f_out = weight.shape()[0], f_in = weight.shape()[1];
  if (xs.back() != f_in)
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(weight.shape()));
  if (bias && bias->shape() != Shape{f_out})
    throw ShapeError("linear: bias shape " + shape_str(bias->shape()) + " != (" +
                     std::to_string(f_out) + ",)");
  const std::size_t rows = x.value().size() / f_in;
  Shape os = xs;
  os.back() = f_out;
  Tensor out(os);
  const auto& xv = x.value().values();
  const auto& wv = weight.value().values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < f_out; ++o) {
      double acc = bias ? bias->value()[o] : 0.0;
      for (std::size_t i = 0; i < f_in; ++i) acc += xv[r * f_in + i] * wv[o * f_in + i];
      out[r * f_out + o] = acc;
    }
  const std::size_t ix = x.id(), iw = weight.id();
  const std::size_t ib = bias ? bias->id() : 0;
  const bool has_bias = bias != nullptr;
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(
      std::move(out), inputs, [ix, iw, ib, has_bias, rows, f_in, f_out](Tape& t, const Tensor& g) {
        const auto& xv = t.value(ix).values();
        const auto& wv = t.value(iw).values();
        if (Tensor* s = t.grad_sink(ix))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < f_out; ++o) {
              const double go = g[r * f_out + o];
              for (std::size_t i = 0; i < f_in; ++i) (*s)[r * f_in + i] += go * wv[o * f_in + i];
            }
        if (Tensor* s = t.grad_sink(iw))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < f_out; ++o) {
              const double go = g[r * f_out + o];
              for (std::size_t i = 0; i < f_in; ++i) (*s)[o * f_in + i] += go * xv[r * f_in + i];
            }
        if (has_bias)
          if (Tensor* s = t.grad_sink(ib))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < f_out; ++o) (*s)[o] += g[r * f_out + o];
      });
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) { return linear(x, weight, &bias); }

/// Dilated causal convolution. x (C_in, T), weight (C_out, C_in, k), bias (C_out).
/// The input is left-padded with (k-1)*dilation zeros, so
///   y[c, t] = bias[c] + sum_{c', j} w[c, c', j] * x[c', t - (k-1-j)*dilation]
/// with out-of-range x read as zero. Output length equals input length.
inline Var causal_conv1d(const Var& x, const Var& weight, const Var& bias, std::size_t dilation) {
  detail::require_rank(x, 2, "causal_conv1d");
  detail::require_rank(weight, 3, "causal_conv1d");
  if (dilation < 1) throw std::invalid_argument("causal_conv1d: dilation must be >= 1");
  const std::size_t c_in = x.shape()[0], steps = x.shape()[1];
  const std::size_t c_out = weight.shape()[0], k = weight.shape()[2];
  if (k < 1) throw std::invalid_argument("causal_conv1d: kernel size must be >= 1");
  if (weight.shape()[1] != c_in)
    throw ShapeError("causal_conv1d: weight " + shape_str(weight.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  if (bias.shape() != Shape{c_out})
    throw ShapeError("causal_conv1d: bias shape " + shape_str(bias.shape()));

  Tensor out(Shape{c_out, steps});
  const auto& xv = x.value().values();
  const auto& wv = weight.value().values();
  const auto& bv = bias.value().values();
  auto& ov = out.values();
  for (std::size_t c = 0; c < c_out; ++c) {
    double* orow = &ov[c * steps];
    std::fill(orow, orow + steps, bv[c]);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* xrow = &xv[ci * steps];
      for (std::size_t j = 0; j < k; ++j) {
        const double w = wv[(c * c_in + ci) * k + j];
        const std::size_t shift = (k - 1 - j) * dilation;
        for (std::size_t t = shift; t < steps; ++t) orow[t] += w * xrow[t - shift];
      }
    }
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, weight, bias},
      [ix, iw, ib, c_in, c_out, k, steps, dilation](Tape& t, const Tensor& g) {
        const auto& xv = t.value(ix).values();
        const auto& wv = t.value(iw).values();
        const auto& gv = g.values();
        Tensor* sx = t.grad_sink(ix);
        Tensor* sw = t.grad_sink(iw);
        for (std::size_t c = 0; c < c_out; ++c) {
          const double* grow = &gv[c * steps];
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* xrow = &xv[ci * steps];
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t shift = (k - 1 - j) * dilation;
              if (shift >= steps) continue;
              const std::size_t widx = (c * c_in + ci) * k + j;
              if (sx) {
                const double w = wv[widx];
                double* sxrow = &sx->values()[ci * steps];
                for (std::size_t tt = shift; tt < steps; ++tt) sxrow[tt - shift] += w * grow[tt];
              }
              if (sw) {
                double acc = 0.0;
                for (std::size_t tt = shift; tt < steps; ++tt) acc += grow[tt] * xrow[tt - shift];
                (*sw)[widx] += acc;
              }
            }
          }
        }
        if (Tensor* sb = t.grad_sink(ib))
          for (std::size_t c = 0; c < c_out; ++c) {
            double acc = 0.0;
            for (std::size_t tt = 0; tt < steps; ++tt) acc += gv[c * steps + tt];
            (*sb)[c] += acc;
          }
      });
}

// ---------------------------------------------------------------------------
// Attention helpers

enum class MaskMode { NegInf, ZeroLiteral };

/// Softmax over the trailing axis. Entries equal to -inf receive probability 0.
inline Var softmax_rows(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("softmax_rows: input must have at least one axis");
  const std::size_t width = xs.back();
  const std::size_t rows = width ? x.value().size() / width : 0;
  Tensor out(xs);
  const auto& xv = x.value().values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * width];
    double* o = &out[r * width];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, in[j]);
    if (std::isinf(mx) && mx < 0) throw std::domain_error("softmax_rows: row is entirely -inf");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  const std::size_t ix = x.id();
  const std::size_t out_id = x.tape().next_id();
  return x.tape().record(std::move(out), {x}, [ix, rows, width, out_id](Tape& t, const Tensor& g) {
    Tensor* s = t.grad_sink(ix);
    if (!s) return;
    const auto& y = t.value(out_id).values();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * y[r * width + j];
      for (std::size_t j = 0; j < width; ++j)
        (*s)[r * width + j] += y[r * width + j] * (g[r * width + j] - dot);
    }
  });
}

/// Suppresses scores strictly above the main diagonal of a square matrix,
/// either with -inf (causal) or with a literal zero.
inline Var lower_triangular_mask(const Var& scores, MaskMode mode = MaskMode::NegInf) {
  detail::require_rank(scores, 2, "lower_triangular_mask");
  const std::size_t n = scores.shape()[0];
  if (scores.shape()[1] != n)
    throw ShapeError("lower_triangular_mask: matrix is not square " + shape_str(scores.shape()));
  const double fill =
      mode == MaskMode::NegInf ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor out = scores.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out[i * n + j] = fill;
  const std::size_t is = scores.id();
  return scores.tape().record(std::move(out), {scores}, [is, n](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(is))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) (*s)[i * n + j] += g[i * n + j];
  });
}

// ---------------------------------------------------------------------------
// Reshaping and reductions

/// Mean over one axis; the axis is removed from the shape.
inline Var mean_over_axis(const Var& x, std::size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size())
    throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(xs));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t n = xs[axis];
  if (n == 0) throw ShapeError("mean_over_axis: empty axis");
  Shape os;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (i != axis) os.push_back(xs[i]);
  Tensor out(os);
  const auto& xv = x.value().values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + a) * inner + i];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.values()) v *= inv;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, outer, n, inner, inv](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ix))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t i = 0; i < inner; ++i) (*s)[(o * n + a) * inner + i] += g[o * inner + i] * inv;
  });
}

/// Stacks equally shaped values along a new leading axis.
inline Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& ps = parts.front().shape();
  for (const Var& p : parts) detail::require_same_shape(parts.front(), p, "stack");
  Shape os{parts.size()};
  os.insert(os.end(), ps.begin(), ps.end());
  Tensor out(os);
  const std::size_t block = shape_size(ps);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].value().values();
    std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * block));
    ids.push_back(parts[i].id());
  }
  return parts.front().tape().record(std::move(out), parts,
                                     [ids = std::move(ids), block](Tape& t, const Tensor& g) {
                                       for (std::size_t i = 0; i < ids.size(); ++i)
                                         if (Tensor* s = t.grad_sink(ids[i]))
                                           for (std::size_t j = 0; j < block; ++j)
                                             (*s)[j] += g[i * block + j];
                                     });
}

/// x[index, ...] along the leading axis.
inline Var select(const Var& x, std::size_t index) {
  const Shape& xs = x.shape();
  if (xs.empty() || index >= xs[0])
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " + shape_str(xs));
  Shape os(xs.begin() + 1, xs.end());
  const std::size_t block = shape_size(os);
  const auto& xv = x.value().values();
  const auto first = xv.begin() + static_cast<std::ptrdiff_t>(index * block);
  Tensor out(os, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(block)));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, index, block](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ix))
      for (std::size_t j = 0; j < block; ++j) (*s)[index * block + j] += g[j];
  });
}

/// Column `step` of a (C, T) matrix, as a (C,) vector.
inline Var time_step(const Var& x, std::size_t step) {
  detail::require_rank(x, 2, "time_step");
  const std::size_t channels = x.shape()[0], steps = x.shape()[1];
  if (step >= steps) throw ShapeError("time_step: step out of range");
  Tensor out(Shape{channels});
  for (std::size_t c = 0; c < channels; ++c) out[c] = x.value()[c * steps + step];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, channels, steps, step](Tape& t, const Tensor& g) {
    if (Tensor* s = t.grad_sink(ix))
      for (std::size_t c = 0; c < channels; ++c) (*s)[c * steps + step] += g[c];
  });
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbabilityFloor = 1e-12;

/// -log p[label] on a probability vector, with p clamped to >= 1e-12.
inline Var cross_entropy(const Var& probs, std::size_t label) {
  detail::require_rank(probs, 1, "cross_entropy");
  const auto& p = probs.value().values();
  if (label >= p.size())
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= -1e-6)) throw std::domain_error("cross_entropy: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw std::domain_error("cross_entropy: probabilities sum to " + std::to_string(total));
  const double pl = p[label];
  const double loss = -std::log(std::max(pl, kProbabilityFloor));
  const std::size_t ip = probs.id();
  return probs.tape().record(Tensor::scalar(loss), {probs}, [ip, label](Tape& t, const Tensor& g) {
    const double pl = t.value(ip)[label];
    if (pl <= kProbabilityFloor) return;
    if (Tensor* s = t.grad_sink(ip)) (*s)[label] += -g[0] / pl;
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

using ScalarFunction = std::function<Var(Tape&, const Var&)>;

/// |a - n| / max(1, |a|, |n|): relative above magnitude 1, absolute below.
inline double gradient_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares the tape gradient of f at x with central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate by coordinate.
/// Returns the maximum gradient_error over all coordinates.
inline double grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.parameter(x);
    Var y = f(tape, xv);
    tape.backward(y);
    analytic = xv.grad();
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var xv = tape.constant(at);
    return f(tape, xv).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, gradient_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace tcnaa
