/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Dense row-major matrices with a recording tape for reverse-mode gradients.
//
// Every differentiable op takes Vars living on the same Tape and appends one
// node holding the forward value plus a closure that pushes the output
// adjoint into its inputs. Nodes are appended in evaluation order, so a
// single reverse sweep over the node list is a valid reverse topological
// order and visits each node exactly once.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "efdmvc/error.hpp"

namespace efdmvc {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // Scalar access for 1x1 results.
  double item() const {
    if (data_.size() != 1) throw DimensionError("Matrix::item on non-scalar " + shape_string());
    return data_[0];
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Matrix&) const = default;

  // Selects the given rows, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= rows_) throw DimensionError("gather_rows: index out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols_), cols_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
  }

 private:
  void check_same(const Matrix& o, const char* what) const {
    if (!same_shape(o)) {
      throw DimensionError(std::string("Matrix ") + what + ": " + shape_string() + " vs " +
                           o.shape_string());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// a[n x k] * b[k x m]
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: " + a.shape_string() + " * " + b.shape_string());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

// a[n x k] * b[m x k]^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: " + a.shape_string() + " * T(" + b.shape_string() + ")");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// a[k x n]^T * b[k x m]
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: T(" + a.shape_string() + ") * " + b.shape_string());
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace detail

// A trainable tensor: value plus accumulated gradient of identical shape.
struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  explicit Param(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
  bool operator==(const Param& o) const { return value == o.value; }
};

class Tape;

// Handle to one node of a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Propagate =
      std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, {}); }

  // Leaf bound to a Param; backward() accumulates into param.grad.
  Var param(Param& p) { return push(p.value, true, &p, {}); }

  // Records an op output. requires_grad is inherited from the inputs.
  Var record(Matrix value, std::initializer_list<Var> inputs, Propagate propagate) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(propagate) : Propagate{});
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` into the adjoint of `v`; no-op for constants.
  void accumulate(const Var& v, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  template <typename Fn>
  void accumulate_with(const Var& v, Fn&& make_grad) {
    if (nodes_[v.id()].requires_grad) accumulate(v, make_grad());
  }

  // Reverse sweep from a scalar. Param gradients accumulate across calls
  // until cleared by the optimizer or Param::zero_grad.
  void backward(const Var& loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
      throw UsageError("backward: loss is not recorded on this tape");
    }
    if (nodes_[loss.id()].value.size() != 1) {
      throw UsageError("backward: loss must be 1x1, got " + nodes_[loss.id()].value.shape_string());
    }
    for (auto& n : nodes_) n.grad = Matrix();
    nodes_[loss.id()].grad = Matrix(1, 1, 1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.propagate) {
        n.propagate(*this, n.grad, n.value);
      } else if (n.param != nullptr) {
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Param* param = nullptr;
    Propagate propagate;
  };

  void check_owned(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw UsageError("Var does not belong to this tape");
    }
  }

  Var push(Matrix value, bool requires_grad, Param* p, Propagate propagate) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, p, std::move(propagate)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const {
  if (tape_ == nullptr) throw UsageError("Var: uninitialized handle");
  return tape_->value(id_);
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

namespace ops {

namespace detail_ops {
inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw UsageError("op on uninitialized Var");
  return *a.tape();
}
inline void same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw UsageError("ops: operands live on different tapes");
}
template <typename F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}
}  // namespace detail_ops

inline Var matmul(const Var& a, const Var& b) {
  detail_ops::same_tape(a, b);
  Tape& t = detail_ops::tape_of(a);
  return t.record(detail::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_with(a, [&] { return detail::matmul_nt(g, b.value()); });
    tp.accumulate_with(b, [&] { return detail::matmul_tn(a.value(), g); });
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  detail_ops::same_tape(a, b);
  Tape& t = detail_ops::tape_of(a);
  return t.record(detail::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_with(a, [&] { return detail::matmul(g, b.value()); });
    tp.accumulate_with(b, [&] { return detail::matmul_tn(g, a.value()); });
  });
}

// y = x W + 1 b
inline Var affine(const Var& x, const Var& w, const Var& bias) {
  detail_ops::same_tape(x, w);
  detail_ops::same_tape(x, bias);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = bias.value();
  detail::require(xv.cols() == wv.rows(),
                  "affine: input " + xv.shape_string() + " vs weight " + wv.shape_string());
  detail::require(bv.rows() == 1 && bv.cols() == wv.cols(),
                  "affine: bias " + bv.shape_string() + " vs weight " + wv.shape_string());
  Matrix y = detail::matmul(xv, wv);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < y.cols(); ++j) r[j] += bv(0, j);
  }
  Tape& t = detail_ops::tape_of(x);
  return t.record(std::move(y), {x, w, bias}, [x, w, bias](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_with(x, [&] { return detail::matmul_nt(g, w.value()); });
    tp.accumulate_with(w, [&] { return detail::matmul_tn(x.value(), g); });
    tp.accumulate_with(bias, [&] {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      return gb;
    });
  });
}

inline Var transpose(const Var& a) {
  Tape& t = detail_ops::tape_of(a);
  return t.record(detail::transpose(a.value()), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, detail::transpose(g));
  });
}

inline Var add(const Var& a, const Var& b) {
  detail_ops::same_tape(a, b);
  detail::require(a.value().same_shape(b.value()),
                  "add: " + a.value().shape_string() + " vs " + b.value().shape_string());
  Matrix y = a.value();
  y += b.value();
  return detail_ops::tape_of(a).record(std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail_ops::same_tape(a, b);
  detail::require(a.value().same_shape(b.value()),
                  "sub: " + a.value().shape_string() + " vs " + b.value().shape_string());
  Matrix y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] -= bd[i];
  return detail_ops::tape_of(a).record(std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    tp.accumulate_with(b, [&] { return detail_ops::map(g, [](double v) { return -v; }); });
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail_ops::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::require(av.same_shape(bv), "hadamard: " + av.shape_string() + " vs " + bv.shape_string());
  Matrix y(av.rows(), av.cols());
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = av.data()[i] * bv.data()[i];
  return detail_ops::tape_of(a).record(std::move(y), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    auto times = [&g](const Matrix& m) {
      Matrix r(g.rows(), g.cols());
      for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = g.data()[i] * m.data()[i];
      return r;
    };
    tp.accumulate_with(a, [&] { return times(b.value()); });
    tp.accumulate_with(b, [&] { return times(a.value()); });
  });
}

inline Var scale(const Var& a, double s) {
  return detail_ops::tape_of(a).record(
      detail_ops::map(a.value(), [s](double v) { return v * s; }), {a},
      [a, s](Tape& tp, const Matrix& g, const Matrix&) {
        tp.accumulate(a, detail_ops::map(g, [s](double v) { return v * s; }));
      });
}

inline Var add_scalar(const Var& a, double s) {
  return detail_ops::tape_of(a).record(detail_ops::map(a.value(), [s](double v) { return v + s; }),
                                       {a}, [a](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(a, g); });
}

inline Var relu(const Var& a) {
  return detail_ops::tape_of(a).record(
      detail_ops::map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
      [a](Tape& tp, const Matrix& g, const Matrix&) {
        Matrix r = g;
        auto x = a.value().data();
        for (std::size_t i = 0; i < r.size(); ++i)
          if (!(x[i] > 0.0)) r.data()[i] = 0.0;
        tp.accumulate(a, r);
      });
}

inline Var exp(const Var& a) {
  Matrix y = detail_ops::map(a.value(), [](double v) { return std::exp(v); });
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a](Tape& tp, const Matrix& g,
                                                              const Matrix& out) {
    Matrix r = g;
    auto y = out.data();
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] *= y[i];
    tp.accumulate(a, r);
  });
}

inline Var log(const Var& a) {
  return detail_ops::tape_of(a).record(
      detail_ops::map(a.value(), [](double v) { return std::log(v); }), {a},
      [a](Tape& tp, const Matrix& g, const Matrix&) {
        Matrix r = g;
        auto x = a.value().data();
        for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] /= x[i];
        tp.accumulate(a, r);
      });
}

// Elementwise x*log(x) with the 0*log(0) := 0 convention.
inline Var xlogx(const Var& a) {
  return detail_ops::tape_of(a).record(
      detail_ops::map(a.value(), [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; }), {a},
      [a](Tape& tp, const Matrix& g, const Matrix&) {
        Matrix r = g;
        auto x = a.value().data();
        for (std::size_t i = 0; i < r.size(); ++i)
          r.data()[i] *= x[i] > 0.0 ? std::log(x[i]) + 1.0 : 0.0;
        tp.accumulate(a, r);
      });
}

// Row-wise softmax with row-max subtraction.
inline Var softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    const double m = xr.empty() ? 0.0 : *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (std::size_t j = 0; j < xr.size(); ++j) s += yr[j] = std::exp(xr[j] - m);
    for (double& v : yr) v /= s;
  }
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a](Tape& tp, const Matrix& g,
                                                              const Matrix& y) {
    Matrix r(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) r(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(a, r);
  });
}

// Scales each row to unit L2 norm. All-zero rows map to zero with zero
// gradient (the cosine of a zero vector is defined as 0).
inline Var normalize_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] > 0.0)
      for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, j) / norms[i];
  }
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a, norms](Tape& tp, const Matrix& g,
                                                                     const Matrix& y) {
    Matrix r(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (!(norms[i] > 0.0)) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) r(i, j) = (g(i, j) - y(i, j) * dot) / norms[i];
    }
    tp.accumulate(a, r);
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail_ops::tape_of(a).record(Matrix(1, 1, s), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, Matrix(a.rows(), a.cols(), g.item()));
  });
}

// N x M -> N x 1
inline Var row_sum(const Var& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double v : x.row(i)) y(i, 0) += v;
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix r(a.rows(), a.cols());
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (std::size_t j = 0; j < r.cols(); ++j) r(i, j) = g(i, 0);
    tp.accumulate(a, r);
  });
}

// N x M -> 1 x M
inline Var col_mean(const Var& a) {
  const Matrix& x = a.value();
  detail::require(x.rows() > 0, "col_mean: empty matrix");
  Matrix y(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(0, j) += x(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& v : y.data()) v *= inv;
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a, inv](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix r(a.rows(), a.cols());
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (std::size_t j = 0; j < r.cols(); ++j) r(i, j) = g(0, j) * inv;
    tp.accumulate(a, r);
  });
}

// Elementwise mean over a list of same-shape Vars.
inline Var mean_of(std::span<const Var> xs) {
  if (xs.empty()) throw UsageError("mean_of: empty list");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return xs.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(xs.size()));
}

// Diagonal of a square matrix as an N x 1 column.
inline Var diag(const Var& a) {
  const Matrix& x = a.value();
  detail::require(x.rows() == x.cols(), "diag: non-square " + x.shape_string());
  Matrix y(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) y(i, 0) = x(i, i);
  return detail_ops::tape_of(a).record(std::move(y), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix r(a.rows(), a.cols());
    for (std::size_t i = 0; i < r.rows(); ++i) r(i, i) = g(i, 0);
    tp.accumulate(a, r);
  });
}

// Row-wise inner products of two same-shape matrices: N x 1.
inline Var row_dot(const Var& a, const Var& b) { return row_sum(hadamard(a, b)); }

// Pairwise cosine similarity between rows of a and rows of b.
inline Var cosine_matrix(const Var& a, const Var& b) {
  return matmul_nt(normalize_rows(a), normalize_rows(b));
}

// Row-wise cosine similarity of paired rows: N x 1.
inline Var cosine_rows(const Var& a, const Var& b) {
  return row_dot(normalize_rows(a), normalize_rows(b));
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order optimizer over an ordered parameter list. Adam moments are
// kept per list position, so callers must pass the same list every step.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind = OptimizerKind::adam, double lr = 1e-3, AdamHyper hyper = {})
      : kind_(kind), lr_(lr), hyper_(hyper) {}

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t steps() const { return steps_; }

  // Applies one update and clears gradients. Throws TrainingError without
  // touching any value if a gradient is non-finite.
  void step(std::span<Param* const> params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->grad.all_finite()) {
        throw TrainingError("optimizer: non-finite gradient in parameter " + std::to_string(i));
      }
      if (!params[i]->value.same_shape(params[i]->grad)) {
        throw DimensionError("optimizer: grad shape mismatch in parameter " + std::to_string(i));
      }
    }
    if (kind_ == OptimizerKind::sgd) {
      for (Param* p : params) {
        auto w = p->value.data();
        auto g = p->grad.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * g[k];
        p->zero_grad();
      }
      ++steps_;
      return;
    }
    if (first_.empty()) {
      for (Param* p : params) {
        first_.emplace_back(p->value.rows(), p->value.cols());
        second_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (first_.size() != params.size()) {
      throw UsageError("optimizer: parameter list changed between steps");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(hyper_.beta1, t);
    const double c2 = 1.0 - std::pow(hyper_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i]->value.data();
      auto g = params[i]->grad.data();
      auto m = first_[i].data();
      auto v = second_[i].data();
      if (w.size() != m.size()) throw UsageError("optimizer: parameter shape changed between steps");
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = hyper_.beta1 * m[k] + (1.0 - hyper_.beta1) * g[k];
        v[k] = hyper_.beta2 * v[k] + (1.0 - hyper_.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] -= lr_ * mhat / (std::sqrt(vhat) + hyper_.eps);
      }
      params[i]->zero_grad();
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamHyper hyper_;
  std::size_t steps_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace efdmvc
