#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpg/error.hpp"
#include "cpg/tensor.hpp"

namespace cpg {

// Reverse-mode tape. Operations execute eagerly and record a backprop
// closure; backward() replays the closures in strict reverse execution
// order. A tape belongs to exactly one training step (or one decode) and
// is never shared between threads.
//
// Debug builds verify that every forward result is finite; release builds
// skip the scan.
template <typename T>
class TapeT {
 public:
  struct Var {
    std::uint32_t idx = UINT32_MAX;
    bool valid() const { return idx != UINT32_MAX; }
  };

  using Grads = std::map<std::string, TensorT<T>>;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  const TensorT<T>& value(Var v) const { return nodes_[v.idx].value; }

  // ---- leaves ----

  Var constant(TensorT<T> v) { return push(std::move(v), false, {}, nullptr); }

  // Trainable leaf; gradients are accumulated under `name`.
  Var leaf(const std::string& name, TensorT<T> v) {
    Var out = push(std::move(v), true, name, nullptr);
    return out;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const TensorT<T>& A = value(a);
    const TensorT<T>& B = value(b);
    CPG_CHECK(A.rank() == 2 && B.rank() == 2, Errc::shape,
              "matmul expects rank-2 operands");
    CPG_CHECK(A.extent(1) == B.extent(0), Errc::shape,
              "matmul inner extents differ: " + shape_str(A.shape()) + " vs " +
                  shape_str(B.shape()));
    std::size_t m = A.extent(0), k = A.extent(1), n = B.extent(1);
    TensorT<T> C(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        T aip = A[i * k + p];
        if (aip == T(0)) continue;
        const T* brow = &B[p * n];
        T* crow = &C[i * n];
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return push(std::move(C), needs(a, b), {}, [this, a, b](Var out) {
      const TensorT<T>& A = value_(a);
      const TensorT<T>& B = value_(b);
      const TensorT<T>& G = grad_ref(out);
      std::size_t m = A.extent(0), k = A.extent(1), n = B.extent(1);
      if (wants(a)) {
        TensorT<T>& dA = grad_buf(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            T g = G[i * n + j];
            if (g == T(0)) continue;
            for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[p * n + j];
          }
      }
      if (wants(b)) {
        TensorT<T>& dB = grad_buf(b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T av = A[i * k + p];
            if (av == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
          }
      }
    });
  }

  // (m x k) matrix times length-k vector.
  Var matvec(Var a, Var x) {
    const TensorT<T>& A = value(a);
    const TensorT<T>& X = value(x);
    CPG_CHECK(A.rank() == 2 && X.rank() == 1, Errc::shape,
              "matvec expects matrix and vector");
    CPG_CHECK(A.extent(1) == X.extent(0), Errc::shape,
              "matvec inner extents differ: " + shape_str(A.shape()) + " vs " +
                  shape_str(X.shape()));
    std::size_t m = A.extent(0), k = A.extent(1);
    TensorT<T> Y(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
      T acc = 0;
      const T* arow = &A[i * k];
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * X[p];
      Y[i] = acc;
    }
    return push(std::move(Y), needs(a, x), {}, [this, a, x](Var out) {
      const TensorT<T>& A = value_(a);
      const TensorT<T>& X = value_(x);
      const TensorT<T>& G = grad_ref(out);
      std::size_t m = A.extent(0), k = A.extent(1);
      if (wants(a)) {
        TensorT<T>& dA = grad_buf(a);
        for (std::size_t i = 0; i < m; ++i) {
          T g = G[i];
          if (g == T(0)) continue;
          T* drow = &dA[i * k];
          for (std::size_t p = 0; p < k; ++p) drow[p] += g * X[p];
        }
      }
      if (wants(x)) {
        TensorT<T>& dX = grad_buf(x);
        for (std::size_t i = 0; i < m; ++i) {
          T g = G[i];
          if (g == T(0)) continue;
          const T* arow = &A[i * k];
          for (std::size_t p = 0; p < k; ++p) dX[p] += g * arow[p];
        }
      }
    });
  }

  Var dot(Var a, Var b) {
    const TensorT<T>& A = value(a);
    const TensorT<T>& B = value(b);
    CPG_CHECK(A.rank() == 1 && B.rank() == 1 && A.size() == B.size(),
              Errc::shape, "dot expects equal-length vectors");
    T acc = 0;
    for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * B[i];
    return push(TensorT<T>::scalar(acc), needs(a, b), {}, [this, a, b](Var out) {
      const TensorT<T>& A = value_(a);
      const TensorT<T>& B = value_(b);
      T g = grad_ref(out)[0];
      if (wants(a)) {
        TensorT<T>& dA = grad_buf(a);
        for (std::size_t i = 0; i < A.size(); ++i) dA[i] += g * B[i];
      }
      if (wants(b)) {
        TensorT<T>& dB = grad_buf(b);
        for (std::size_t i = 0; i < B.size(); ++i) dB[i] += g * A[i];
      }
    });
  }

  // ---- elementwise ----

  // Binary ops require equal shapes; the only broadcast is a scalar on
  // either side.
  Var add(Var a, Var b) { return binary(a, b, BinOp::add); }
  Var mul(Var a, Var b) { return binary(a, b, BinOp::mul); }

  Var scale(Var a, T c) {
    TensorT<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
    return push(std::move(y), needs(a), {}, [this, a, c](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += c * G[i];
    });
  }

  Var tanh(Var a) {
    TensorT<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
    Var out = push(std::move(y), needs(a), {}, nullptr);
    set_backprop(out, [this, a, out2 = out](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& Y = value_(out);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < Y.size(); ++i)
        dA[i] += (T(1) - Y[i] * Y[i]) * G[i];
    });
    return out;
  }

  Var sigmoid(Var a) {
    TensorT<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) {
      T x = y[i];
      y[i] = x >= 0 ? T(1) / (T(1) + std::exp(-x))
                    : std::exp(x) / (T(1) + std::exp(x));
    }
    Var out = push(std::move(y), needs(a), {}, nullptr);
    set_backprop(out, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& Y = value_(out);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < Y.size(); ++i)
        dA[i] += Y[i] * (T(1) - Y[i]) * G[i];
    });
    return out;
  }

  Var exp(Var a) {
    TensorT<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(y[i]);
    Var out = push(std::move(y), needs(a), {}, nullptr);
    set_backprop(out, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& Y = value_(out);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < Y.size(); ++i) dA[i] += Y[i] * G[i];
    });
    return out;
  }

  Var log(Var a) {
    TensorT<T> y = value(a);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CPG_CHECK(y[i] > T(0), Errc::domain, "log of non-positive value");
      y[i] = std::log(y[i]);
    }
    return push(std::move(y), needs(a), {}, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& X = value_(a);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < X.size(); ++i) dA[i] += G[i] / X[i];
    });
  }

  // ---- reductions and softmax ----

  Var sum(Var a) {
    const TensorT<T>& A = value(a);
    T acc = 0;
    for (std::size_t i = 0; i < A.size(); ++i) acc += A[i];
    return push(TensorT<T>::scalar(acc), needs(a), {}, [this, a](Var out) {
      if (!wants(a)) return;
      T g = grad_ref(out)[0];
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += g;
    });
  }

  // Numerically stable vector softmax (max subtraction).
  Var softmax(Var a) {
    const TensorT<T>& X = value(a);
    CPG_CHECK(X.rank() == 1 && X.size() >= 1, Errc::shape,
              "softmax expects a nonempty vector");
    TensorT<T> y = X;
    T mx = *std::max_element(y.data().begin(), y.data().end());
    T z = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = std::exp(y[i] - mx);
      z += y[i];
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= z;
    Var out = push(std::move(y), needs(a), {}, nullptr);
    set_backprop(out, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& Y = value_(out);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      T gy = 0;
      for (std::size_t i = 0; i < Y.size(); ++i) gy += G[i] * Y[i];
      for (std::size_t i = 0; i < Y.size(); ++i) dA[i] += Y[i] * (G[i] - gy);
    });
    return out;
  }

  Var log_softmax(Var a) {
    const TensorT<T>& X = value(a);
    CPG_CHECK(X.rank() == 1 && X.size() >= 1, Errc::shape,
              "log_softmax expects a nonempty vector");
    TensorT<T> y = X;
    T mx = *std::max_element(y.data().begin(), y.data().end());
    T z = 0;
    for (std::size_t i = 0; i < y.size(); ++i) z += std::exp(y[i] - mx);
    T lz = std::log(z) + mx;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= lz;
    Var out = push(std::move(y), needs(a), {}, nullptr);
    set_backprop(out, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& Y = value_(out);
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      T gsum = 0;
      for (std::size_t i = 0; i < G.size(); ++i) gsum += G[i];
      for (std::size_t i = 0; i < Y.size(); ++i)
        dA[i] += G[i] - std::exp(Y[i]) * gsum;
    });
    return out;
  }

  // ---- structure ----

  Var concat(Var a, Var b) {
    const TensorT<T>& A = value(a);
    const TensorT<T>& B = value(b);
    CPG_CHECK(A.rank() == 1 && B.rank() == 1, Errc::shape,
              "concat expects vectors");
    std::vector<T> d(A.data().begin(), A.data().end());
    d.insert(d.end(), B.data().begin(), B.data().end());
    std::size_t na = A.size();
    return push(TensorT<T>(Shape{d.size()}, std::move(d)), needs(a, b), {},
                [this, a, b, na](Var out) {
                  const TensorT<T>& G = grad_ref(out);
                  if (wants(a)) {
                    TensorT<T>& dA = grad_buf(a);
                    for (std::size_t i = 0; i < na; ++i) dA[i] += G[i];
                  }
                  if (wants(b)) {
                    TensorT<T>& dB = grad_buf(b);
                    for (std::size_t i = 0; i < G.size() - na; ++i)
                      dB[i] += G[na + i];
                  }
                });
  }

  Var slice(Var a, std::size_t off, std::size_t len) {
    const TensorT<T>& A = value(a);
    CPG_CHECK(A.rank() == 1, Errc::shape, "slice expects a vector");
    CPG_CHECK(off + len <= A.size(), Errc::lookup, "slice out of range");
    std::vector<T> d(A.data().begin() + off, A.data().begin() + off + len);
    return push(TensorT<T>(Shape{len}, std::move(d)), needs(a), {},
                [this, a, off, len](Var out) {
                  if (!wants(a)) return;
                  const TensorT<T>& G = grad_ref(out);
                  TensorT<T>& dA = grad_buf(a);
                  for (std::size_t i = 0; i < len; ++i) dA[off + i] += G[i];
                });
  }

  Var element(Var a, std::size_t i) {
    const TensorT<T>& A = value(a);
    CPG_CHECK(A.rank() == 1, Errc::shape, "element expects a vector");
    CPG_CHECK(i < A.size(), Errc::lookup, "element index out of range");
    return push(TensorT<T>::scalar(A[i]), needs(a), {}, [this, a, i](Var out) {
      if (!wants(a)) return;
      grad_buf(a)[i] += grad_ref(out)[0];
    });
  }

  Var reshape(Var a, Shape shape) {
    const TensorT<T>& A = value(a);
    CPG_CHECK(shape_size(shape) == A.size(), Errc::shape,
              "reshape must preserve size");
    TensorT<T> y(shape, std::vector<T>(A.data().begin(), A.data().end()));
    return push(std::move(y), needs(a), {}, [this, a](Var out) {
      if (!wants(a)) return;
      const TensorT<T>& G = grad_ref(out);
      TensorT<T>& dA = grad_buf(a);
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += G[i];
    });
  }

  // Row of a matrix (embedding lookup); gradients scatter into that row.
  Var row(Var a, std::size_t i) {
    const TensorT<T>& A = value(a);
    CPG_CHECK(A.rank() == 2, Errc::shape, "row expects a matrix");
    CPG_CHECK(i < A.extent(0), Errc::lookup,
              "row index " + std::to_string(i) + " out of range for " +
                  shape_str(A.shape()));
    std::size_t c = A.extent(1);
    std::vector<T> d(A.data().begin() + i * c, A.data().begin() + (i + 1) * c);
    return push(TensorT<T>(Shape{c}, std::move(d)), needs(a), {},
                [this, a, i, c](Var out) {
                  if (!wants(a)) return;
                  const TensorT<T>& G = grad_ref(out);
                  TensorT<T>& dA = grad_buf(a);
                  for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += G[j];
                });
  }

  Var stack_rows(const std::vector<Var>& rows) {
    CPG_CHECK(!rows.empty(), Errc::contract, "stack_rows on empty list");
    std::size_t c = value(rows[0]).size();
    std::vector<T> d;
    d.reserve(rows.size() * c);
    bool ng = false;
    for (Var r : rows) {
      const TensorT<T>& R = value(r);
      CPG_CHECK(R.rank() == 1 && R.size() == c, Errc::shape,
                "stack_rows expects equal-length vectors");
      d.insert(d.end(), R.data().begin(), R.data().end());
      ng = ng || nodes_[r.idx].needs_grad;
    }
    return push(TensorT<T>(Shape{rows.size(), c}, std::move(d)), ng, {},
                [this, rows, c](Var out) {
                  const TensorT<T>& G = grad_ref(out);
                  for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (!wants(rows[r])) continue;
                    TensorT<T>& dR = grad_buf(rows[r]);
                    for (std::size_t j = 0; j < c; ++j) dR[j] += G[r * c + j];
                  }
                });
  }

  Var stack_scalars(const std::vector<Var>& xs) {
    CPG_CHECK(!xs.empty(), Errc::contract, "stack_scalars on empty list");
    std::vector<T> d;
    d.reserve(xs.size());
    bool ng = false;
    for (Var x : xs) {
      const TensorT<T>& X = value(x);
      CPG_CHECK(X.size() == 1, Errc::shape, "stack_scalars expects scalars");
      d.push_back(X[0]);
      ng = ng || nodes_[x.idx].needs_grad;
    }
    return push(TensorT<T>(Shape{xs.size()}, std::move(d)), ng, {},
                [this, xs](Var out) {
                  const TensorT<T>& G = grad_ref(out);
                  for (std::size_t i = 0; i < xs.size(); ++i) {
                    if (!wants(xs[i])) continue;
                    grad_buf(xs[i])[0] += G[i];
                  }
                });
  }

  // ---- backward ----

  // Accumulates d(loss)/d(leaf) for every named leaf that influenced the
  // loss. Leaves that did not influence it are absent from the result.
  Grads backward(Var loss) {
    CPG_CHECK(value(loss).size() == 1, Errc::contract,
              "backward requires a scalar loss");
    grads_.assign(nodes_.size(), TensorT<T>());
    has_grad_.assign(nodes_.size(), 0);
    grad_buf(loss)[0] = T(1);
    for (std::size_t i = loss.idx + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !has_grad_[i] || !n.backprop) continue;
      n.backprop(Var{static_cast<std::uint32_t>(i)});
    }
    Grads out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param_name.empty() || !has_grad_[i]) continue;
      auto it = out.find(nodes_[i].param_name);
      if (it == out.end()) {
        out.emplace(nodes_[i].param_name, grads_[i]);
      } else {
        TensorT<T>& acc = it->second;
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grads_[i][j];
      }
    }
    grads_.clear();
    has_grad_.clear();
    return out;
  }

 private:
  enum class BinOp { add, mul };

  struct Node {
    TensorT<T> value;
    std::string param_name;
    bool needs_grad = false;
    std::function<void(Var)> backprop;
  };

  bool needs(Var a) const { return nodes_[a.idx].needs_grad; }
  bool needs(Var a, Var b) const {
    return nodes_[a.idx].needs_grad || nodes_[b.idx].needs_grad;
  }
  // During backward: does this argument need its gradient materialized?
  bool wants(Var a) const { return nodes_[a.idx].needs_grad; }

  const TensorT<T>& value_(Var v) const { return nodes_[v.idx].value; }

  TensorT<T>& grad_buf(Var v) {
    if (!has_grad_[v.idx]) {
      grads_[v.idx] = TensorT<T>(nodes_[v.idx].value.shape());
      has_grad_[v.idx] = 1;
    }
    return grads_[v.idx];
  }
  const TensorT<T>& grad_ref(Var v) { return grad_buf(v); }

  Var push(TensorT<T> value, bool needs_grad, std::string param_name,
           std::function<void(Var)> backprop) {
#ifndef NDEBUG
    if (!value.all_finite())
      fail(Errc::numeric, "non-finite value produced by a forward operation");
#endif
    nodes_.push_back(Node{std::move(value), std::move(param_name), needs_grad,
                          needs_grad ? std::move(backprop) : nullptr});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void set_backprop(Var v, std::function<void(Var)> fn) {
    if (nodes_[v.idx].needs_grad) nodes_[v.idx].backprop = std::move(fn);
  }

  Var binary(Var a, Var b, BinOp op) {
    const TensorT<T>& A = value(a);
    const TensorT<T>& B = value(b);
    bool a_scalar = A.is_scalar() && !B.is_scalar();
    bool b_scalar = B.is_scalar() && !A.is_scalar();
    CPG_CHECK(a_scalar || b_scalar || A.same_shape(B), Errc::shape,
              "elementwise op requires equal shapes (scalar broadcast only): " +
                  shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    const TensorT<T>& big = a_scalar ? B : A;
    TensorT<T> y(big.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      T av = a_scalar ? A[0] : A[i];
      T bv = b_scalar ? B[0] : B[i];
      y[i] = op == BinOp::add ? av + bv : av * bv;
    }
    return push(std::move(y), needs(a, b), {},
                [this, a, b, op, a_scalar, b_scalar](Var out) {
                  const TensorT<T>& A = value_(a);
                  const TensorT<T>& B = value_(b);
                  const TensorT<T>& G = grad_ref(out);
                  if (wants(a)) {
                    TensorT<T>& dA = grad_buf(a);
                    for (std::size_t i = 0; i < G.size(); ++i) {
                      T g = op == BinOp::add ? G[i]
                                             : G[i] * (b_scalar ? B[0] : B[i]);
                      dA[a_scalar ? 0 : i] += g;
                    }
                  }
                  if (wants(b)) {
                    TensorT<T>& dB = grad_buf(b);
                    for (std::size_t i = 0; i < G.size(); ++i) {
                      T g = op == BinOp::add ? G[i]
                                             : G[i] * (a_scalar ? A[0] : A[i]);
                      dB[b_scalar ? 0 : i] += g;
                    }
                  }
                });
  }

  std::vector<Node> nodes_;
  std::vector<TensorT<T>> grads_;
  std::vector<char> has_grad_;
};

using Tape32 = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace cpg
