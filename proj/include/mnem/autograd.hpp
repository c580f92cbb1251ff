#pragma once

// Small reverse-mode tape over row-major Eigen matrices. Ops are fused at the
// granularity the model needs (attention, dynamic convolution, layer norm,
// cross-entropy) so the tape stays short.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "mnem/error.hpp"
#include "mnem/rng.hpp"

namespace mnem::ag {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  using M = Mat<T>;

  Var constant(M v) { return push(std::move(v), false); }

  // Read-only view of external storage; no gradient.
  Var ref(const M& v) {
    Node n;
    n.ext = &v;
    nodes_.push_back(std::move(n));
    return last();
  }

  // Parameter leaf: gradients accumulate straight into `grad`.
  Var param(const M& value, M& grad) {
    Node n;
    n.ext = &value;
    n.ext_grad = &grad;
    n.needs = true;
    nodes_.push_back(std::move(n));
    return last();
  }

  const M& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ext ? *n.ext : n.value;
  }
  T scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul shape mismatch");
    Var out = push(rowwise_product(value(a), value(b)), needs(a) || needs(b));
    back(out, [this, a, b, out] {
      const M& g = grad_of(out);
      if (needs(a)) acc(a, g * value(b).transpose());
      if (needs(b)) acc(b, value(a).transpose() * g);
    });
    return out;
  }

  // a * b^T
  Var matmul_bt(Var a, Var b) {
    check(value(a).cols() == value(b).cols(), "matmul_bt shape mismatch");
    Var out = push(rowwise_product(value(a), value(b).transpose()), needs(a) || needs(b));
    back(out, [this, a, b, out] {
      const M& g = grad_of(out);
      if (needs(a)) acc(a, g * value(b));
      if (needs(b)) acc(b, g.transpose() * value(a));
    });
    return out;
  }

  Var add(Var a, Var b) {
    check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
    Var out = push(value(a) + value(b), needs(a) || needs(b));
    back(out, [this, a, b, out] {
      if (needs(a)) acc(a, grad_of(out));
      if (needs(b)) acc(b, grad_of(out));
    });
    return out;
  }

  // a + broadcast row vector r
  Var add_row(Var a, Var r) {
    check(value(r).rows() == 1 && value(r).cols() == value(a).cols(), "add_row shape mismatch");
    M v = value(a);
    v.rowwise() += value(r).row(0);
    Var out = push(std::move(v), needs(a) || needs(r));
    back(out, [this, a, r, out] {
      if (needs(a)) acc(a, grad_of(out));
      if (needs(r)) acc(r, grad_of(out).colwise().sum());
    });
    return out;
  }

  Var scale(Var a, T s) {
    Var out = push(value(a) * s, needs(a));
    back(out, [this, a, s, out] { acc(a, grad_of(out) * s); });
    return out;
  }

  Var relu(Var a) {
    Var out = push(value(a).cwiseMax(T(0)), needs(a));
    back(out, [this, a, out] {
      acc(a, (value(a).array() > T(0)).select(grad_of(out), M::Zero(value(a).rows(), value(a).cols())));
    });
    return out;
  }

  // Inverted dropout; identity when rate is 0.
  Var dropout(Var a, double rate, CounterRng& rng) {
    if (rate <= 0.0) return a;
    const M& x = value(a);
    M mask(x.rows(), x.cols());
    const T keep = T(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.unit() < rate ? T(0) : keep;
    Var out = push(x.cwiseProduct(mask), needs(a));
    back(out, [this, a, out, mask = std::move(mask)] { acc(a, grad_of(out).cwiseProduct(mask)); });
    return out;
  }

  // Row-wise layer norm with gain g and bias b (both 1 x cols).
  Var layer_norm(Var x, Var g, Var b, T eps = T(1e-5)) {
    const M& xv = value(x);
    const Eigen::Index n = xv.rows(), d = xv.cols();
    M xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mu = xv.row(i).mean();
      const T var = (xv.row(i).array() - mu).square().mean();
      rstd(i) = T(1) / std::sqrt(var + eps);
      xhat.row(i) = (xv.row(i).array() - mu) * rstd(i);
    }
    M y = xhat.array().rowwise() * value(g).row(0).array();
    y.rowwise() += value(b).row(0);
    Var out = push(std::move(y), needs(x) || needs(g) || needs(b));
    back(out, [this, x, g, b, out, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const M& gy = grad_of(out);
      if (needs(g)) acc(g, gy.cwiseProduct(xhat).colwise().sum());
      if (needs(b)) acc(b, gy.colwise().sum());
      if (needs(x)) {
        M dxhat = gy.array().rowwise() * value(g).row(0).array();
        M dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index i = 0; i < dx.rows(); ++i) {
          const T m1 = dxhat.row(i).mean();
          const T m2 = dxhat.row(i).dot(xhat.row(i)) / T(dx.cols());
          dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * rstd(i);
        }
        acc(x, dx);
      }
    });
    return out;
  }

  // Rows of `table` picked by ids.
  Var gather(Var table, std::vector<int> ids) {
    const M& tv = value(table);
    M v(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] >= 0 && ids[i] < tv.rows(), "gather index out of range");
      v.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    Var out = push(std::move(v), needs(table));
    back(out, [this, table, out, ids = std::move(ids)] {
      M& gt = grad_buffer(table);
      const M& g = grad_of(out);
      for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    });
    return out;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat of nothing");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    bool any = false;
    for (Var p : parts) {
      check(value(p).cols() == cols, "concat width mismatch");
      rows += value(p).rows();
      any = any || needs(p);
    }
    M v(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
      v.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    Var out = push(std::move(v), any);
    back(out, [this, parts, out] {
      Eigen::Index r0 = 0;
      for (Var p : parts) {
        const Eigen::Index n = value(p).rows();
        if (needs(p)) acc(p, grad_of(out).middleRows(r0, n));
        r0 += n;
      }
    });
    return out;
  }

  // Multi-head scaled dot-product attention. q: n x d, k/v: m x d. With
  // `causal`, query i sees keys j <= i (requires n == m).
  Var attention(Var q, Var k, Var v, int heads, bool causal) {
    const M& Q = value(q);
    const M& K = value(k);
    const M& V = value(v);
    check(Q.cols() == K.cols() && K.cols() == V.cols() && K.rows() == V.rows(), "attention shape mismatch");
    check(heads > 0 && Q.cols() % heads == 0, "heads must divide width");
    check(!causal || Q.rows() == K.rows(), "causal attention needs square scores");
    const Eigen::Index dh = Q.cols() / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    std::vector<M> probs(static_cast<std::size_t>(heads));
    M o(Q.rows(), Q.cols());
    for (int h = 0; h < heads; ++h) {
      M s(Q.rows(), K.rows());
      for (Eigen::Index i = 0; i < Q.rows(); ++i) {
        for (Eigen::Index j = 0; j < K.rows(); ++j) s(i, j) = Q.row(i).segment(h * dh, dh).dot(K.row(j).segment(h * dh, dh)) * sc;
      }
      if (causal) {
        // row by row over the visible prefix only, so row i never depends on
        // how many later positions exist
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
          softmax_segment(s, i, 0, static_cast<int>(i + 1));
          s.row(i).tail(s.cols() - i - 1).setZero();
          o.row(i).segment(h * dh, dh) = s.row(i).head(i + 1) * V.middleRows(0, i + 1).middleCols(h * dh, dh);
        }
      } else {
        softmax_rows(s);
        o.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
      }
      probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Var out = push(std::move(o), needs(q) || needs(k) || needs(v));
    back(out, [this, q, k, v, out, heads, dh, sc, probs = std::move(probs)] {
      const M& g = grad_of(out);
      const M& Qv = value(q);
      const M& Kv = value(k);
      const M& Vv = value(v);
      M dq = M::Zero(Qv.rows(), Qv.cols());
      M dk = M::Zero(Kv.rows(), Kv.cols());
      M dv = M::Zero(Vv.rows(), Vv.cols());
      for (int h = 0; h < heads; ++h) {
        const M& P = probs[static_cast<std::size_t>(h)];
        const auto gh = g.middleCols(h * dh, dh);
        M dp = gh * Vv.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) += P.transpose() * gh;
        M ds = P.cwiseProduct(dp);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
        ds -= P.cwiseProduct(rs.replicate(1, P.cols()));
        ds *= sc;
        dq.middleCols(h * dh, dh) += ds * Kv.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) += ds.transpose() * Qv.middleCols(h * dh, dh);
      }
      if (needs(q)) acc(q, dq);
      if (needs(k)) acc(k, dk);
      if (needs(v)) acc(v, dv);
    });
    return out;
  }

  // Causal depthwise convolution with per-position softmax kernels.
  // x: n x d, logits: n x (heads * k). Head h owns channels
  // [h*d/heads, (h+1)*d/heads); y[t] = sum_j w[t,h,j] * x[t-j], zero left pad.
  Var dynamic_conv(Var x, Var logits, int heads, int k) {
    const M& X = value(x);
    const M& L = value(logits);
    check(heads > 0 && k > 0 && X.cols() % heads == 0, "bad dynamic conv geometry");
    check(L.rows() == X.rows() && L.cols() == heads * k, "dynamic conv logits shape mismatch");
    const Eigen::Index n = X.rows(), dh = X.cols() / heads;
    M w = L;
    for (Eigen::Index t = 0; t < n; ++t) {
      for (int h = 0; h < heads; ++h) softmax_segment(w, t, h * k, k);
    }
    M y = M::Zero(n, X.cols());
    for (Eigen::Index t = 0; t < n; ++t) {
      for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < k && j <= t; ++j) {
          y.row(t).segment(h * dh, dh) += w(t, h * k + j) * X.row(t - j).segment(h * dh, dh);
        }
      }
    }
    Var out = push(std::move(y), needs(x) || needs(logits));
    back(out, [this, x, logits, out, heads, k, dh, w = std::move(w)] {
      const M& g = grad_of(out);
      const M& Xv = value(x);
      const Eigen::Index n2 = Xv.rows();
      M dx = M::Zero(n2, Xv.cols());
      M dl = M::Zero(n2, heads * k);
      for (Eigen::Index t = 0; t < n2; ++t) {
        for (int h = 0; h < heads; ++h) {
          T dot_wd = 0;
          for (int j = 0; j < k; ++j) {
            T dw = 0;
            if (j <= t) {
              dw = g.row(t).segment(h * dh, dh).dot(Xv.row(t - j).segment(h * dh, dh));
              dx.row(t - j).segment(h * dh, dh) += w(t, h * k + j) * g.row(t).segment(h * dh, dh);
            }
            dl(t, h * k + j) = dw;
            dot_wd += w(t, h * k + j) * dw;
          }
          for (int j = 0; j < k; ++j) dl(t, h * k + j) = w(t, h * k + j) * (dl(t, h * k + j) - dot_wd);
        }
      }
      if (needs(x)) acc(x, dx);
      if (needs(logits)) acc(logits, dl);
    });
    return out;
  }

  // weight * sum_i -log softmax(logits_i)[target_i], as a 1 x 1 value.
  Var cross_entropy(Var logits, std::vector<int> targets, T weight) {
    const M& Lg = value(logits);
    check(static_cast<Eigen::Index>(targets.size()) == Lg.rows(), "one target per row");
    M p = Lg;
    softmax_rows(p);
    T loss = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      check(targets[i] >= 0 && targets[i] < Lg.cols(), "target out of range");
      loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), targets[i]), std::numeric_limits<T>::min()));
    }
    M v(1, 1);
    v(0, 0) = loss * weight;
    Var out = push(std::move(v), needs(logits));
    back(out, [this, logits, out, weight, targets = std::move(targets), p = std::move(p)]() mutable {
      const T g = grad_of(out)(0, 0) * weight;
      for (std::size_t i = 0; i < targets.size(); ++i) p(static_cast<Eigen::Index>(i), targets[i]) -= T(1);
      acc(logits, p * g);
    });
    return out;
  }

  // sum(a .* c) for a constant c; 1 x 1.
  Var dot(Var a, M c) {
    check(value(a).rows() == c.rows() && value(a).cols() == c.cols(), "dot shape mismatch");
    M v(1, 1);
    v(0, 0) = value(a).cwiseProduct(c).sum();
    Var out = push(std::move(v), needs(a));
    back(out, [this, a, out, c = std::move(c)] { acc(a, c * grad_of(out)(0, 0)); });
    return out;
  }

  // Seeds d(loss) = 1 and runs every recorded backward step in reverse.
  void backward(Var loss) {
    check(value(loss).size() == 1, "backward needs a scalar");
    if (!nodes_[loss.id].needs) return;
    acc(loss, M::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.has_grad && n.back) n.back();
    }
  }

  // Row-at-a-time product: a row's result never depends on how many other
  // rows there are (blocked GEMM would change the summation order).
  template <class B>
  static M rowwise_product(const M& a, const B& b) {
    M out(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) out.row(i).noalias() = a.row(i) * b;
    return out;
  }

  static void softmax_rows(M& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) softmax_segment(s, i, 0, static_cast<int>(s.cols()));
  }

 private:
  struct Node {
    M value;
    const M* ext = nullptr;
    M grad;
    M* ext_grad = nullptr;
    bool needs = false;
    bool has_grad = false;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;

  static void check(bool ok, const char* what) {
    if (!ok) throw ArgumentError(what);
  }

  static void softmax_segment(M& s, Eigen::Index row, int begin, int len) {
    auto seg = s.row(row).segment(begin, len);
    const T mx = seg.maxCoeff();
    seg = (seg.array() - mx).exp();
    seg /= seg.sum();
  }

  Var last() const { return {static_cast<int>(nodes_.size()) - 1}; }

  Var push(M v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs = needs_grad;
    nodes_.push_back(std::move(n));
    return last();
  }

  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs; }

  template <class F>
  void back(Var v, F&& f) {
    if (needs(v)) nodes_[static_cast<std::size_t>(v.id)].back = std::forward<F>(f);
  }

  const M& grad_of(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  M& grad_buffer(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    n.has_grad = true;
    if (n.ext_grad) return *n.ext_grad;
    if (n.grad.size() == 0) {
      const M& val = n.ext ? *n.ext : n.value;
      n.grad = M::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  template <class E>
  void acc(Var v, const E& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs) return;
    if (n.ext_grad) {
      *n.ext_grad += g;
    } else if (!n.has_grad || n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
    n.has_grad = true;
  }
};

}  // namespace mnem::ag
