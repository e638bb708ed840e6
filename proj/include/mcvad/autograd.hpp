// mcvad/autograd.hpp

// Copyright 2026 The mcvad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Tensor-level reverse-mode differentiation.
//
// A Tape records every operation in creation order, so the node list is
// already a topological order and backward() is a single reverse sweep.
// Nodes that do not depend on any leaf created with Tape::leaf() carry no
// backward closure and receive no gradient, which is how detached branches
// and constant inputs are handled.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcvad/errors.hpp"
#include "mcvad/tensor.hpp"

namespace mcvad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor &value() const;
  const Shape &shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t id() const { return id_; }
  Tape *tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape *tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape &, std::size_t)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(Tensor v) { return push(std::move(v), false, nullptr); }
  Var leaf(Tensor v) { return push(std::move(v), true, nullptr); }

  /// Records an operation; the closure is dropped when no parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool rg = false;
    for (const Var &p : parents) {
      if (p.tape() != this) throw ArgumentError("operand belongs to a different tape");
      rg = rg || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  const Tensor &value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of a node, allocated on first use.
  Tensor &grad_ref(std::size_t id) {
    Node &n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape, 0.0);
    return n.grad;
  }

  /// Gradient of the last backward() target w.r.t. v (zeros when unreached).
  Tensor grad(const Var &v) const {
    const Node &n = nodes_[v.id()];
    if (n.grad.size() != n.value.size()) return Tensor(n.value.shape, 0.0);
    return n.grad;
  }

  void backward(const Var &loss) {
    if (loss.size() != 1) throw ArgumentError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      if (!nodes_[i].value.all_finite())
        throw NumericError("non-finite value in forward pass at node " + std::to_string(i));
    }
    for (Node &n : nodes_) n.grad = Tensor();
    grad_ref(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node &n = nodes_[i];
      if (!n.fn || n.grad.size() == 0) continue;
      n.fn(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn fn;
  };

  Var push(Tensor v, bool rg, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), Tensor(), rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor &Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

/// Named trainable tensors, iterated in name order for deterministic updates.
using ParamSet = std::map<std::string, Tensor>;
using BoundParams = std::map<std::string, Var>;

inline BoundParams bind_params(Tape &tape, const ParamSet &params) {
  BoundParams out;
  for (const auto &[name, t] : params) out.emplace(name, tape.leaf(t));
  return out;
}

inline BoundParams bind_constants(Tape &tape, const ParamSet &params) {
  BoundParams out;
  for (const auto &[name, t] : params) out.emplace(name, tape.constant(t));
  return out;
}

inline ParamSet collect_grads(const Tape &tape, const BoundParams &bound) {
  ParamSet out;
  for (const auto &[name, v] : bound) out.emplace(name, tape.grad(v));
  return out;
}

inline const Var &param(const BoundParams &bound, const std::string &name) {
  auto it = bound.find(name);
  if (it == bound.end()) throw ArgumentError("missing parameter '" + name + "'");
  return it->second;
}

inline std::size_t param_count(const ParamSet &params) {
  std::size_t n = 0;
  for (const auto &[name, t] : params) n += t.size();
  return n;
}

namespace ag {

namespace detail {

inline void require_same(const Var &a, const Var &b, const char *op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

template <class F, class D>
Var unary(const Var &a, F f, D dfdx) {
  Tape &tp = *a.tape();
  const Tensor &x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return tp.record(std::move(y), {a}, [ia, dfdx](Tape &t, std::size_t self) {
    const Tensor &x = t.value(ia);
    const Tensor &yv = t.value(self);
    const Tensor &g = t.grad_ref(self);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * dfdx(x[i], yv[i]);
  });
}

}  // namespace detail

inline Var add(const Var &a, const Var &b) {
  Tape &tp = *a.tape();
  const bool bcast = b.size() == 1 && a.size() != 1;
  if (!bcast) detail::require_same(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bcast ? b.value()[0] : b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tp.record(std::move(y), {a, b}, [ia, ib, bcast](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Tensor &ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor &gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? 0 : i] += g[i];
    }
  });
}

inline Var mul(const Var &a, const Var &b) {
  Tape &tp = *a.tape();
  const bool bcast = b.size() == 1 && a.size() != 1;
  if (!bcast) detail::require_same(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bcast ? b.value()[0] : b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tp.record(std::move(y), {a, b}, [ia, ib, bcast](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &av = t.value(ia);
    const Tensor &bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor &ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (bcast ? bv[0] : bv[i]);
    }
    if (t.requires_grad(ib)) {
      Tensor &gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? 0 : i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var &a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var sub(const Var &a, const Var &b) { return add(a, scale(b, -1.0)); }

inline Var add_scalar(const Var &a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var reciprocal(const Var &a) {
  return detail::unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

inline Var div(const Var &a, const Var &b) { return mul(a, reciprocal(b)); }

inline Var relu(const Var &a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Elementwise log(x + eps).
inline Var log(const Var &a, double eps = 0.0) {
  return detail::unary(a, [eps](double x) { return std::log(x + eps); },
                       [eps](double x, double) { return 1.0 / (x + eps); });
}

inline Var exp(const Var &a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(const Var &a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var &a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var sum(const Var &a) {
  Tape &tp = *a.tape();
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id();
  return tp.record(Tensor::scalar(s), {a}, [ia](Tape &t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    Tensor &ga = t.grad_ref(ia);
    for (double &v : ga.data) v += g;
  });
}

inline Var mean(const Var &a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Frobenius norm sqrt(sum x^2); the subgradient at zero is taken as zero.
inline Var frobenius(const Var &a) {
  Tape &tp = *a.tape();
  double s = 0.0;
  for (double v : a.value().data) s += v * v;
  const std::size_t ia = a.id();
  return tp.record(Tensor::scalar(std::sqrt(s)), {a}, [ia](Tape &t, std::size_t self) {
    const double n = t.value(self)[0];
    if (n == 0.0) return;
    const double g = t.grad_ref(self)[0] / n;
    const Tensor &x = t.value(ia);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * x[i];
  });
}

inline Var reshape(const Var &a, Shape s) {
  if (shape_size(s) != a.size()) throw ArgumentError("reshape: size mismatch to " + shape_str(s));
  Tape &tp = *a.tape();
  Tensor y(std::move(s), a.value().data);
  const std::size_t ia = a.id();
  return tp.record(std::move(y), {a}, [ia](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Returns a copy that no gradient flows through.
inline Var detach(const Var &a) { return a.tape()->constant(a.value()); }

/// a[..., K] x b[K, M] -> [..., M].
inline Var matmul(const Var &a, const Var &b) {
  const Shape &as = a.shape();
  const Shape &bs = b.shape();
  if (as.empty() || bs.size() != 2 || as.back() != bs[0])
    throw ArgumentError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  using MMap = Eigen::Map<RowMat>;
  const auto K = static_cast<Eigen::Index>(bs[0]), M = static_cast<Eigen::Index>(bs[1]);
  const auto R = static_cast<Eigen::Index>(a.size()) / K;
  Shape ys = as;
  ys.back() = bs[1];
  Tensor y(ys, 0.0);
  MMap(y.data.data(), R, M).noalias() = CMap(a.value().data.data(), R, K) * CMap(b.value().data.data(), K, M);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib, R, K, M](Tape &t, std::size_t self) {
    const CMap G(t.grad_ref(self).data.data(), R, M);
    if (t.requires_grad(ia))
      MMap(t.grad_ref(ia).data.data(), R, K).noalias() += G * CMap(t.value(ib).data.data(), K, M).transpose();
    if (t.requires_grad(ib))
      MMap(t.grad_ref(ib).data.data(), K, M).noalias() += CMap(t.value(ia).data.data(), R, K).transpose() * G;
  });
}

/// a[..., M] + bias[M] broadcast over leading axes.
inline Var add_bias(const Var &a, const Var &bias) {
  const std::size_t M = bias.size();
  if (a.shape().empty() || a.shape().back() != M)
    throw ArgumentError("add_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  Tensor y = a.value();
  const Tensor &bv = bias.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % M];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->record(std::move(y), {a, bias}, [ia, ib, M](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Tensor &ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor &gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % M] += g[i];
    }
  });
}

/// Affine map x W + b over the last axis.
inline Var linear(const Var &x, const Var &w, const Var &b) { return add_bias(matmul(x, w), b); }

/// Batched a[B,n,d] x b[B,m,d]^T -> [B,n,m].
inline Var bmm_nt(const Var &a, const Var &b) {
  const Shape &as = a.shape();
  const Shape &bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[2])
    throw ArgumentError("bmm_nt: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t B = as[0], n = as[1], m = bs[1], d = as[2];
  Tensor y(Shape{B, n, m}, 0.0);
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  for (std::size_t z = 0; z < B; ++z)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        const double *ai = &av.data[(z * n + i) * d];
        const double *bj = &bv.data[(z * m + j) * d];
        for (std::size_t k = 0; k < d; ++k) acc += ai[k] * bj[k];
        y.data[(z * n + i) * m + j] = acc;
      }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib, B, n, m, d](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &av = t.value(ia);
    const Tensor &bv = t.value(ib);
    const bool ra = t.requires_grad(ia), rb = t.requires_grad(ib);
    Tensor *ga = ra ? &t.grad_ref(ia) : nullptr;
    Tensor *gb = rb ? &t.grad_ref(ib) : nullptr;
    for (std::size_t z = 0; z < B; ++z)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g.data[(z * n + i) * m + j];
          for (std::size_t k = 0; k < d; ++k) {
            if (ra) ga->data[(z * n + i) * d + k] += gij * bv.data[(z * m + j) * d + k];
            if (rb) gb->data[(z * m + j) * d + k] += gij * av.data[(z * n + i) * d + k];
          }
        }
  });
}

/// Batched a[B,n,m] x b[B,m,p] -> [B,n,p].
inline Var bmm(const Var &a, const Var &b) {
  const Shape &as = a.shape();
  const Shape &bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
    throw ArgumentError("bmm: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t B = as[0], n = as[1], m = as[2], p = bs[2];
  Tensor y(Shape{B, n, p}, 0.0);
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  for (std::size_t z = 0; z < B; ++z)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double aij = av.data[(z * n + i) * m + j];
        for (std::size_t k = 0; k < p; ++k) y.data[(z * n + i) * p + k] += aij * bv.data[(z * m + j) * p + k];
      }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib, B, n, m, p](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &av = t.value(ia);
    const Tensor &bv = t.value(ib);
    const bool ra = t.requires_grad(ia), rb = t.requires_grad(ib);
    Tensor *ga = ra ? &t.grad_ref(ia) : nullptr;
    Tensor *gb = rb ? &t.grad_ref(ib) : nullptr;
    for (std::size_t z = 0; z < B; ++z)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double acc = 0.0;
          const double aij = av.data[(z * n + i) * m + j];
          for (std::size_t k = 0; k < p; ++k) {
            const double gik = g.data[(z * n + i) * p + k];
            acc += gik * bv.data[(z * m + j) * p + k];
            if (rb) gb->data[(z * m + j) * p + k] += aij * gik;
          }
          if (ra) ga->data[(z * n + i) * m + j] += acc;
        }
  });
}

/// Softmax over the last axis with max subtraction.
inline Var softmax_last(const Var &a) {
  const std::size_t M = a.shape().back();
  const std::size_t R = a.size() / M;
  Tensor y(a.shape());
  const Tensor &x = a.value();
  for (std::size_t r = 0; r < R; ++r) {
    const double *xr = &x.data[r * M];
    double *yr = &y.data[r * M];
    const double mx = *std::max_element(xr, xr + M);
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) s += (yr[m] = std::exp(xr[m] - mx));
    for (std::size_t m = 0; m < M; ++m) yr[m] /= s;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia, R, M](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &yv = t.value(self);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t m = 0; m < M; ++m) dot += g[r * M + m] * yv[r * M + m];
      for (std::size_t m = 0; m < M; ++m) ga[r * M + m] += yv[r * M + m] * (g[r * M + m] - dot);
    }
  });
}

namespace detail {
// Views a tensor as [outer, axis, inner] around `axis`.
inline void split_axis(const Shape &s, std::size_t axis, std::size_t &outer, std::size_t &inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Concatenation along `axis`; all other extents must agree.
inline Var concat(const Var &a, const Var &b, std::size_t axis) {
  const Shape &as = a.shape();
  const Shape &bs = b.shape();
  if (as.size() != bs.size() || axis >= as.size())
    throw ArgumentError("concat: bad ranks " + shape_str(as) + " / " + shape_str(bs));
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis && as[i] != bs[i]) throw ArgumentError("concat: mismatch " + shape_str(as) + " / " + shape_str(bs));
  std::size_t outer, inner;
  detail::split_axis(as, axis, outer, inner);
  const std::size_t na = as[axis] * inner, nb = bs[axis] * inner;
  Shape ys = as;
  ys[axis] += bs[axis];
  Tensor y(ys);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(&a.value().data[o * na], na, &y.data[o * (na + nb)]);
    std::copy_n(&b.value().data[o * nb], nb, &y.data[o * (na + nb) + na]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(y), {a, b}, [ia, ib, outer, na, nb](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    if (t.requires_grad(ia)) {
      Tensor &ga = t.grad_ref(ia);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < na; ++i) ga[o * na + i] += g[o * (na + nb) + i];
    }
    if (t.requires_grad(ib)) {
      Tensor &gb = t.grad_ref(ib);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < nb; ++i) gb[o * nb + i] += g[o * (na + nb) + na + i];
    }
  });
}

/// Half-open slice [begin, end) along `axis`.
inline Var slice(const Var &a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape &as = a.shape();
  if (axis >= as.size() || begin >= end || end > as[axis])
    throw ArgumentError("slice: bad range on " + shape_str(as));
  std::size_t outer, inner;
  detail::split_axis(as, axis, outer, inner);
  const std::size_t full = as[axis] * inner, part = (end - begin) * inner, off = begin * inner;
  Shape ys = as;
  ys[axis] = end - begin;
  Tensor y(ys);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(&a.value().data[o * full + off], part, &y.data[o * part]);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia, outer, full, part, off](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < part; ++i) ga[o * full + off + i] += g[o * part + i];
  });
}

/// Swaps the first two axes of a rank-3 tensor: [A,B,K] -> [B,A,K].
inline Var swap01(const Var &a) {
  const Shape &s = a.shape();
  if (s.size() != 3) throw ArgumentError("swap01 needs rank 3, got " + shape_str(s));
  const std::size_t A = s[0], B = s[1], K = s[2];
  Tensor y(Shape{B, A, K});
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j) std::copy_n(&a.value().data[(i * B + j) * K], K, &y.data[(j * A + i) * K]);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia, A, B, K](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    Tensor &ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < K; ++k) ga[(i * B + j) * K + k] += g[(j * A + i) * K + k];
  });
}

/// Mean and variance normalization along axis 0 (time), independently for
/// every trailing index: y = (x - mean) / (std + eps), population std.
inline Var mvn_time(const Var &a, double eps) {
  const Shape &s = a.shape();
  if (s.empty() || s[0] < 2) throw ArgumentError("mvn needs at least 2 frames, got " + shape_str(s));
  const std::size_t T = s[0], M = a.size() / T;
  const Tensor &x = a.value();
  Tensor y(s);
  std::vector<double> mu(M, 0.0), sd(M, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) mu[m] += x[t * M + m];
  for (double &v : mu) v /= static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) {
      const double d = x[t * M + m] - mu[m];
      sd[m] += d * d;
    }
  for (double &v : sd) v = std::sqrt(v / static_cast<double>(T));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t m = 0; m < M; ++m) y[t * M + m] = (x[t * M + m] - mu[m]) / (sd[m] + eps);
  const std::size_t ia = a.id();
  return a.tape()->record(
      std::move(y), {a}, [ia, T, M, eps, mu = std::move(mu), sd = std::move(sd)](Tape &t, std::size_t self) {
        const Tensor &g = t.grad_ref(self);
        const Tensor &x = t.value(ia);
        Tensor &ga = t.grad_ref(ia);
        const double Td = static_cast<double>(T);
        for (std::size_t m = 0; m < M; ++m) {
          const double den = sd[m] + eps;
          double gsum = 0.0, gx = 0.0;
          for (std::size_t k = 0; k < T; ++k) {
            gsum += g[k * M + m];
            gx += g[k * M + m] * (x[k * M + m] - mu[m]);
          }
          const double gbar = gsum / Td;
          const double coef = sd[m] > 0.0 ? gx / (Td * sd[m] * den * den) : 0.0;
          for (std::size_t k = 0; k < T; ++k)
            ga[k * M + m] += (g[k * M + m] - gbar) / den - (x[k * M + m] - mu[m]) * coef;
        }
      });
}

/// Layer normalization over the last axis with learned gain and bias.
inline Var layer_norm(const Var &a, const Var &gain, const Var &bias, double eps = 1e-5) {
  const std::size_t F = a.shape().back();
  if (gain.size() != F || bias.size() != F) throw ArgumentError("layer_norm: gain/bias width mismatch");
  const std::size_t R = a.size() / F;
  const Tensor &x = a.value();
  Tensor xhat(a.shape()), y(a.shape());
  std::vector<double> inv(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t f = 0; f < F; ++f) mu += x[r * F + f];
    mu /= static_cast<double>(F);
    for (std::size_t f = 0; f < F; ++f) var += (x[r * F + f] - mu) * (x[r * F + f] - mu);
    var /= static_cast<double>(F);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t f = 0; f < F; ++f) {
      xhat[r * F + f] = (x[r * F + f] - mu) * inv[r];
      y[r * F + f] = xhat[r * F + f] * gain.value()[f] + bias.value()[f];
    }
  }
  const std::size_t ia = a.id(), ig = gain.id(), ibias = bias.id();
  return a.tape()->record(
      std::move(y), {a, gain, bias},
      [ia, ig, ibias, R, F, xhat = std::move(xhat), inv = std::move(inv)](Tape &t, std::size_t self) {
        const Tensor &g = t.grad_ref(self);
        const Tensor &gv = t.value(ig);
        if (t.requires_grad(ig)) {
          Tensor &gg = t.grad_ref(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % F] += g[i] * xhat[i];
        }
        if (t.requires_grad(ibias)) {
          Tensor &gb = t.grad_ref(ibias);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % F] += g[i];
        }
        if (t.requires_grad(ia)) {
          Tensor &ga = t.grad_ref(ia);
          const double Fd = static_cast<double>(F);
          for (std::size_t r = 0; r < R; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
              const double gh = g[r * F + f] * gv[f];
              s1 += gh;
              s2 += gh * xhat[r * F + f];
            }
            for (std::size_t f = 0; f < F; ++f) {
              const double gh = g[r * F + f] * gv[f];
              ga[r * F + f] += inv[r] * (gh - s1 / Fd - xhat[r * F + f] * s2 / Fd);
            }
          }
        }
      });
}

/// Causal dilated 1-D convolution.
///   x: [T, Cin], w: [Cout, kernel, Cin], b: [Cout] -> [T, Cout]
///   y[t,o] = b[o] + sum_j sum_i w[o,j,i] * x[t - (kernel-1-j)*dilation, i]
/// with zeros before the first frame.
inline Var conv1d_causal(const Var &x, const Var &w, const Var &b, std::size_t dilation) {
  const Shape &xs = x.shape();
  const Shape &ws = w.shape();
  if (xs.size() != 2 || ws.size() != 3 || ws[2] != xs[1] || b.size() != ws[0])
    throw ArgumentError("conv1d: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws));
  const std::size_t T = xs[0], Cin = xs[1], Cout = ws[0], Kk = ws[1];
  Tensor y(Shape{T, Cout});
  const double *X = x.value().data.data();
  const double *W = w.value().data.data();
  const double *Bv = b.value().data.data();
  for (std::size_t t = 0; t < T; ++t) {
    double *yt = &y.data[t * Cout];
    for (std::size_t o = 0; o < Cout; ++o) yt[o] = Bv[o];
    for (std::size_t j = 0; j < Kk; ++j) {
      const std::size_t back = (Kk - 1 - j) * dilation;
      if (back > t) continue;
      const double *xr = X + (t - back) * Cin;
      for (std::size_t o = 0; o < Cout; ++o) {
        const double *wr = W + (o * Kk + j) * Cin;
        double acc = 0.0;
        for (std::size_t i = 0; i < Cin; ++i) acc += wr[i] * xr[i];
        yt[o] += acc;
      }
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->record(
      std::move(y), {x, w, b}, [ix, iw, ib, T, Cin, Cout, Kk, dilation](Tape &t, std::size_t self) {
        const Tensor &g = t.grad_ref(self);
        const double *X = t.value(ix).data.data();
        const double *W = t.value(iw).data.data();
        const bool rx = t.requires_grad(ix), rw = t.requires_grad(iw);
        if (t.requires_grad(ib)) {
          Tensor &gb = t.grad_ref(ib);
          for (std::size_t s = 0; s < T; ++s)
            for (std::size_t o = 0; o < Cout; ++o) gb[o] += g[s * Cout + o];
        }
        double *GX = rx ? t.grad_ref(ix).data.data() : nullptr;
        double *GW = rw ? t.grad_ref(iw).data.data() : nullptr;
        for (std::size_t s = 0; s < T; ++s) {
          const double *gs = &g.data[s * Cout];
          for (std::size_t j = 0; j < Kk; ++j) {
            const std::size_t back = (Kk - 1 - j) * dilation;
            if (back > s) continue;
            const std::size_t src = s - back;
            const double *xr = X + src * Cin;
            for (std::size_t o = 0; o < Cout; ++o) {
              const double go = gs[o];
              if (go == 0.0) continue;
              const std::size_t wo = (o * Kk + j) * Cin;
              if (rx) {
                double *gxr = GX + src * Cin;
                for (std::size_t i = 0; i < Cin; ++i) gxr[i] += go * W[wo + i];
              }
              if (rw)
                for (std::size_t i = 0; i < Cin; ++i) GW[wo + i] += go * xr[i];
            }
          }
        }
      });
}

/// w[T,C] weighting of x[T,C,K], summed over channels -> [T,K].
inline Var weighted_channel_sum(const Var &w, const Var &x) {
  const Shape &ws = w.shape();
  const Shape &xs = x.shape();
  if (ws.size() != 2 || xs.size() != 3 || ws[0] != xs[0] || ws[1] != xs[1])
    throw ArgumentError("weighted_channel_sum: w" + shape_str(ws) + " x" + shape_str(xs));
  const std::size_t T = xs[0], C = xs[1], K = xs[2];
  Tensor y(Shape{T, K}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const double wc = w.value().data[t * C + c];
      for (std::size_t k = 0; k < K; ++k) y.data[t * K + k] += wc * x.value().data[(t * C + c) * K + k];
    }
  const std::size_t iw = w.id(), ix = x.id();
  return w.tape()->record(std::move(y), {w, x}, [iw, ix, T, C, K](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &wv = t.value(iw);
    const Tensor &xv = t.value(ix);
    const bool rw = t.requires_grad(iw), rx = t.requires_grad(ix);
    Tensor *gw = rw ? &t.grad_ref(iw) : nullptr;
    Tensor *gx = rx ? &t.grad_ref(ix) : nullptr;
    for (std::size_t tt = 0; tt < T; ++tt)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        const double wc = wv.data[tt * C + c];
        for (std::size_t k = 0; k < K; ++k) {
          const double gk = g.data[tt * K + k];
          acc += gk * xv.data[(tt * C + c) * K + k];
          if (rx) gx->data[(tt * C + c) * K + k] += wc * gk;
        }
        if (rw) gw->data[tt * C + c] += acc;
      }
  });
}

/// Polar channel combination with magnitude and phase weights:
///   z[t,k] = sum_c wm[t,c] * mag[t,c,k] * exp(j (2 pi wp[t,c] + phase[t,c,k]))
/// returned as [T,K,2] (real, imaginary). mag and phase are data and must
/// not require gradients.
inline Var polar_combine(const Var &wm, const Var &wp, const Var &mag, const Var &phase) {
  const Shape &ms = mag.shape();
  if (ms.size() != 3 || phase.shape() != ms || wm.shape() != Shape{ms[0], ms[1]} || wp.shape() != wm.shape())
    throw ArgumentError("polar_combine: incompatible shapes");
  if (mag.requires_grad() || phase.requires_grad())
    throw ArgumentError("polar_combine: magnitude/phase inputs must be constants");
  const std::size_t T = ms[0], C = ms[1], K = ms[2];
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Tensor y(Shape{T, K, 2}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const double a = wm.value().data[t * C + c];
      const double rot = kTwoPi * wp.value().data[t * C + c];
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t i = (t * C + c) * K + k;
        const double th = rot + phase.value().data[i];
        y.data[(t * K + k) * 2] += a * mag.value().data[i] * std::cos(th);
        y.data[(t * K + k) * 2 + 1] += a * mag.value().data[i] * std::sin(th);
      }
    }
  const std::size_t im = wm.id(), ip = wp.id(), imag = mag.id(), iph = phase.id();
  return wm.tape()->record(std::move(y), {wm, wp, mag, phase}, [=](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &wmv = t.value(im);
    const Tensor &wpv = t.value(ip);
    const Tensor &mv = t.value(imag);
    const Tensor &pv = t.value(iph);
    const bool rm = t.requires_grad(im), rp = t.requires_grad(ip);
    Tensor *gm = rm ? &t.grad_ref(im) : nullptr;
    Tensor *gp = rp ? &t.grad_ref(ip) : nullptr;
    for (std::size_t tt = 0; tt < T; ++tt)
      for (std::size_t c = 0; c < C; ++c) {
        const double a = wmv.data[tt * C + c];
        const double rot = kTwoPi * wpv.data[tt * C + c];
        double dm = 0.0, dp = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t i = (tt * C + c) * K + k;
          const double th = rot + pv.data[i];
          const double cs = std::cos(th), sn = std::sin(th);
          const double gr = g.data[(tt * K + k) * 2], gi = g.data[(tt * K + k) * 2 + 1];
          dm += mv.data[i] * (gr * cs + gi * sn);
          dp += a * mv.data[i] * (-gr * sn + gi * cs);
        }
        if (rm) gm->data[tt * C + c] += dm;
        if (rp) gp->data[tt * C + c] += kTwoPi * dp;
      }
  });
}

/// |z| for z stored as [..., 2]; gradient defined as zero at the origin.
inline Var complex_abs(const Var &z) {
  const Shape &s = z.shape();
  if (s.empty() || s.back() != 2) throw ArgumentError("complex_abs needs trailing axis 2, got " + shape_str(s));
  Shape ys(s.begin(), s.end() - 1);
  Tensor y(ys);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::hypot(z.value()[2 * i], z.value()[2 * i + 1]);
  const std::size_t iz = z.id();
  return z.tape()->record(std::move(y), {z}, [iz](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const Tensor &zv = t.value(iz);
    const Tensor &yv = t.value(self);
    Tensor &gz = t.grad_ref(iz);
    for (std::size_t i = 0; i < yv.size(); ++i) {
      if (yv[i] == 0.0) continue;
      gz[2 * i] += g[i] * zv[2 * i] / yv[i];
      gz[2 * i + 1] += g[i] * zv[2 * i + 1] / yv[i];
    }
  });
}

/// Strided valid correlation of constant signals x[C,N] with kernels h[F,L]:
///   y[t,c,f] = sum_l h[f,l] * x[c, t*stride + l],  T = (N-L)/stride + 1.
inline Var strided_correlate(const Var &x, const Var &h, std::size_t stride) {
  const Shape &xs = x.shape();
  const Shape &hs = h.shape();
  if (xs.size() != 2 || hs.size() != 2 || stride == 0) throw ArgumentError("strided_correlate: bad shapes");
  const std::size_t C = xs[0], N = xs[1], F = hs[0], L = hs[1];
  if (N < L) throw RangeError("signal shorter than the filter kernel");
  const std::size_t T = (N - L) / stride + 1;
  Tensor y(Shape{T, C, F}, 0.0);
  const double *X = x.value().data.data();
  const double *H = h.value().data.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      const double *xs0 = X + c * N + t * stride;
      for (std::size_t f = 0; f < F; ++f) {
        const double *hf = H + f * L;
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) acc += hf[l] * xs0[l];
        y.data[(t * C + c) * F + f] = acc;
      }
    }
  const std::size_t ix = x.id(), ih = h.id();
  return x.tape()->record(std::move(y), {x, h}, [ix, ih, T, C, N, F, L, stride](Tape &t, std::size_t self) {
    const Tensor &g = t.grad_ref(self);
    const double *X = t.value(ix).data.data();
    const double *H = t.value(ih).data.data();
    const bool rx = t.requires_grad(ix), rh = t.requires_grad(ih);
    double *GX = rx ? t.grad_ref(ix).data.data() : nullptr;
    double *GH = rh ? t.grad_ref(ih).data.data() : nullptr;
    for (std::size_t tt = 0; tt < T; ++tt)
      for (std::size_t c = 0; c < C; ++c) {
        const double *xs0 = X + c * N + tt * stride;
        for (std::size_t f = 0; f < F; ++f) {
          const double gv = g.data[(tt * C + c) * F + f];
          if (gv == 0.0) continue;
          if (rh)
            for (std::size_t l = 0; l < L; ++l) GH[f * L + l] += gv * xs0[l];
          if (rx)
            for (std::size_t l = 0; l < L; ++l) GX[c * N + tt * stride + l] += gv * H[f * L + l];
        }
      }
  });
}

/// Mean frame cross-entropy of logits[T,M] against integer labels.
inline Var cross_entropy(const Var &logits, std::span<const int> labels) {
  const Shape &s = logits.shape();
  if (s.size() != 2) throw ArgumentError("cross_entropy: logits must be [T, classes]");
  const std::size_t T = s[0], M = s[1];
  if (labels.size() != T)
    throw ArgumentError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(T) +
                        " frames");
  Tensor p(s);
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t t = 0; t < T; ++t) {
    if (lab[t] < 0 || static_cast<std::size_t>(lab[t]) >= M) throw ArgumentError("cross_entropy: label out of range");
    const double *z = &logits.value().data[t * M];
    const double mx = *std::max_element(z, z + M);
    double se = 0.0;
    for (std::size_t m = 0; m < M; ++m) se += (p.data[t * M + m] = std::exp(z[m] - mx));
    for (std::size_t m = 0; m < M; ++m) p.data[t * M + m] /= se;
    loss -= z[lab[t]] - mx - std::log(se);
  }
  loss /= static_cast<double>(T);
  const std::size_t il = logits.id();
  return logits.tape()->record(
      Tensor::scalar(loss), {logits}, [il, T, M, p = std::move(p), lab = std::move(lab)](Tape &t, std::size_t self) {
        const double g = t.grad_ref(self)[0] / static_cast<double>(T);
        Tensor &gl = t.grad_ref(il);
        for (std::size_t tt = 0; tt < T; ++tt)
          for (std::size_t m = 0; m < M; ++m)
            gl[tt * M + m] += g * (p.data[tt * M + m] - (static_cast<int>(m) == lab[tt] ? 1.0 : 0.0));
      });
}

}  // namespace ag
}  // namespace mcvad
