#pragma once

// Minimal reverse-mode differentiation over 2-D tensors. A Graph records
// each operation with its backward rule; backward() walks the tape in
// reverse. Scalar type is a template parameter so the same model code runs
// in float for training and double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "lcip/common.hpp"

namespace lcip::ad {

template <typename T>
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, T v = T(0)) : rows(r), cols(c), data(r * c, v) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMajor<T>> view(const Tensor<T>& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

template <typename T>
Eigen::Map<RowMajor<T>> view(Tensor<T>& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

template <typename T>
using Strided = Eigen::OuterStride<Eigen::Dynamic>;

template <typename T>
Eigen::Map<const RowMajor<T>, 0, Strided<T>> block(const Tensor<T>& t, std::size_t r, std::size_t c,
                                                   std::size_t rows, std::size_t cols) {
  return {t.data.data() + r * t.cols + c, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
          Strided<T>(static_cast<Eigen::Index>(t.cols))};
}

template <typename T>
Eigen::Map<RowMajor<T>, 0, Strided<T>> block(Tensor<T>& t, std::size_t r, std::size_t c, std::size_t rows,
                                             std::size_t cols) {
  return {t.data.data() + r * t.cols + c, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
          Strided<T>(static_cast<Eigen::Index>(t.cols))};
}

// out[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  view(out).noalias() += view(a) * view(b);
}

// out[m x k] += a[m x n] * b[k x n]^T
template <typename T>
void gemm_bt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  view(out).noalias() += view(a) * view(b).transpose();
}

// out[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_at_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  view(out).noalias() += view(a).transpose() * view(b);
}

template <typename T>
class Graph {
 public:
  using Var = std::size_t;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var constant(Tensor<T> v) { return push(std::move(v), false); }
  Var parameter(Tensor<T> v) { return push(std::move(v), true); }

  const Tensor<T>& value(Var v) const { return nodes_[v].value; }
  const Tensor<T>& grad(Var v) const { return nodes_[v].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// a[m x k] * b[k x n]
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols != B.rows) throw Error(ErrorCode::ShapeMismatch, "matmul");
    Tensor<T> out(A.rows, B.cols);
    gemm_acc(A, B, out);
    const Var o = push(std::move(out), needs(a) || needs(b));
    set_backward(o, [this, a, b, o] {
      const auto& g = nodes_[o].grad;
      if (needs(a)) gemm_bt_acc(g, value(b), grad_ref(a));
      if (needs(b)) gemm_at_acc(value(a), g, grad_ref(b));
    });
    return o;
  }

  /// x[m x n] + bias[1 x n] on every row
  Var add_row(Var x, Var bias) {
    const auto& X = value(x);
    const auto& Bv = value(bias);
    if (Bv.rows != 1 || Bv.cols != X.cols) throw Error(ErrorCode::ShapeMismatch, "add_row");
    Tensor<T> out = X;
    for (std::size_t i = 0; i < out.rows; ++i) {
      T* r = out.row(i);
      for (std::size_t j = 0; j < out.cols; ++j) r[j] += Bv.data[j];
    }
    const Var o = push(std::move(out), needs(x) || needs(bias));
    set_backward(o, [this, x, bias, o] {
      const auto& g = nodes_[o].grad;
      if (needs(x)) axpy(g, grad_ref(x));
      if (needs(bias)) {
        auto& gb = grad_ref(bias);
        for (std::size_t i = 0; i < g.rows; ++i) {
          const T* r = g.row(i);
          for (std::size_t j = 0; j < g.cols; ++j) gb.data[j] += r[j];
        }
      }
    });
    return o;
  }

  /// x[(B*T) x n] + tile[T x n] repeated over the B blocks
  Var add_tiled(Var x, Var tile) {
    const auto& X = value(x);
    const auto& P = value(tile);
    if (P.cols != X.cols || X.rows % P.rows != 0) throw Error(ErrorCode::ShapeMismatch, "add_tiled");
    Tensor<T> out = X;
    for (std::size_t i = 0; i < out.rows; ++i) {
      T* r = out.row(i);
      const T* p = P.row(i % P.rows);
      for (std::size_t j = 0; j < out.cols; ++j) r[j] += p[j];
    }
    const Var o = push(std::move(out), needs(x) || needs(tile));
    set_backward(o, [this, x, tile, o] {
      const auto& g = nodes_[o].grad;
      if (needs(x)) axpy(g, grad_ref(x));
      if (needs(tile)) {
        auto& gp = grad_ref(tile);
        for (std::size_t i = 0; i < g.rows; ++i) {
          const T* r = g.row(i);
          T* p = gp.row(i % gp.rows);
          for (std::size_t j = 0; j < g.cols; ++j) p[j] += r[j];
        }
      }
    });
    return o;
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows != B.rows || A.cols != B.cols) throw Error(ErrorCode::ShapeMismatch, "add");
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    const Var o = push(std::move(out), needs(a) || needs(b));
    set_backward(o, [this, a, b, o] {
      const auto& g = nodes_[o].grad;
      if (needs(a)) axpy(g, grad_ref(a));
      if (needs(b)) axpy(g, grad_ref(b));
    });
    return o;
  }

  /// Row-wise layer normalization with learned scale and offset [1 x n].
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& X = value(x);
    const std::size_t m = X.rows, n = X.cols;
    Tensor<T> xhat(m, n);
    std::vector<T> inv_std(m);
    Tensor<T> out(m, n);
    const auto& G = value(gamma);
    const auto& Bt = value(beta);
    for (std::size_t i = 0; i < m; ++i) {
      const T* r = X.row(i);
      T mean = T(0);
      for (std::size_t j = 0; j < n; ++j) mean += r[j];
      mean /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
      var /= static_cast<T>(n);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      for (std::size_t j = 0; j < n; ++j) {
        xhat(i, j) = (r[j] - mean) * is;
        out(i, j) = xhat(i, j) * G.data[j] + Bt.data[j];
      }
    }
    const Var o = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
    set_backward(o, [this, x, gamma, beta, o, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& g = nodes_[o].grad;
      const std::size_t m = g.rows, n = g.cols;
      const auto& G = value(gamma);
      if (needs(gamma) || needs(beta)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (needs(gamma)) grad_ref(gamma).data[j] += g(i, j) * xhat(i, j);
            if (needs(beta)) grad_ref(beta).data[j] += g(i, j);
          }
        }
      }
      if (needs(x)) {
        auto& gx = grad_ref(x);
        for (std::size_t i = 0; i < m; ++i) {
          T sum_d = T(0), sum_dx = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g(i, j) * G.data[j];
            sum_d += d;
            sum_dx += d * xhat(i, j);
          }
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g(i, j) * G.data[j];
            gx(i, j) += inv_std[i] * (d - inv_n * sum_d - xhat(i, j) * inv_n * sum_dx);
          }
        }
      }
    });
    return o;
  }

  /// GELU, tanh approximation.
  Var gelu(Var x) {
    const auto& X = value(x);
    Tensor<T> out(X.rows, X.cols);
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    for (std::size_t i = 0; i < X.size(); ++i) {
      const T v = X.data[i];
      out.data[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + T(0.044715) * v * v * v)));
    }
    const Var o = push(std::move(out), needs(x));
    set_backward(o, [this, x, o, c] {
      const auto& g = nodes_[o].grad;
      const auto& X = value(x);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X.data[i];
        const T u = c * (v + T(0.044715) * v * v * v);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * T(0.044715) * v * v);
        gx.data[i] += g.data[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
      }
    });
    return o;
  }

  /// Inverted dropout with a fixed keep mask drawn from rng.
  Var dropout(Var x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    const auto& X = value(x);
    std::vector<T> mask(X.size());
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask) m = uniform01(rng) < rate ? T(0) : scale;
    Tensor<T> out = X;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
    const Var o = push(std::move(out), needs(x));
    set_backward(o, [this, x, o, mask = std::move(mask)] {
      const auto& g = nodes_[o].grad;
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * mask[i];
    });
    return o;
  }

  /// Multi-head scaled dot-product self-attention. q, k, v are (B*T) x d;
  /// heads split the columns. Row-softmax probabilities of every
  /// (batch, head) block are kept in attention_probs().
  Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
    const auto& Q = value(q);
    const auto& K = value(k);
    const auto& V = value(v);
    const std::size_t d = Q.cols;
    if (Q.rows != batch * seq || K.rows != Q.rows || V.rows != Q.rows || d % heads != 0) {
      throw Error(ErrorCode::ShapeMismatch, "attention");
    }
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> probs(batch * heads * seq, seq);
    Tensor<T> out(Q.rows, d);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        auto P = block(probs, (b * heads + h) * seq, 0, seq, seq);
        P.noalias() = block(Q, b * seq, h * dh, seq, dh) * block(K, b * seq, h * dh, seq, dh).transpose();
        for (std::size_t i = 0; i < seq; ++i) {
          T* p = probs.row((b * heads + h) * seq + i);
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < seq; ++j) mx = std::max(mx, p[j] * scale);
          T z = T(0);
          for (std::size_t j = 0; j < seq; ++j) {
            p[j] = std::exp(p[j] * scale - mx);
            z += p[j];
          }
          for (std::size_t j = 0; j < seq; ++j) p[j] /= z;
        }
        block(out, b * seq, h * dh, seq, dh).noalias() = P * block(V, b * seq, h * dh, seq, dh);
      }
    }
    if (record_attention_) last_attention_ = probs;
    const Var o = push(std::move(out), needs(q) || needs(k) || needs(v));
    set_backward(o, [this, q, k, v, o, batch, seq, heads, dh, scale, probs = std::move(probs)] {
      const auto& g = nodes_[o].grad;
      const bool nq = needs(q), nk = needs(k), nv = needs(v);
      Tensor<T> ds(seq, seq);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t r0 = b * seq, c0 = h * dh;
          const auto P = block(probs, (b * heads + h) * seq, 0, seq, seq);
          const auto G = block(g, r0, c0, seq, dh);
          if (nv) block(grad_ref(v), r0, c0, seq, dh).noalias() += P.transpose() * G;
          if (!nq && !nk) continue;
          // dS_ij = P_ij (dP_ij - sum_k P_ik dP_ik), with dP = dO V^T
          auto DS = view(ds);
          DS.noalias() = G * block(value(v), r0, c0, seq, dh).transpose();
          for (std::size_t i = 0; i < seq; ++i) {
            const T* p = probs.row((b * heads + h) * seq + i);
            T* dp = ds.row(i);
            T dot = T(0);
            for (std::size_t j = 0; j < seq; ++j) dot += p[j] * dp[j];
            for (std::size_t j = 0; j < seq; ++j) dp[j] = p[j] * (dp[j] - dot) * scale;
          }
          if (nq) block(grad_ref(q), r0, c0, seq, dh).noalias() += DS * block(value(k), r0, c0, seq, dh);
          if (nk) block(grad_ref(k), r0, c0, seq, dh).noalias() += DS.transpose() * block(value(q), r0, c0, seq, dh);
        }
      }
    });
    return o;
  }

  /// (B*T) x d -> B x d, mean over each block of T rows.
  Var mean_pool(Var x, std::size_t batch, std::size_t seq) {
    const auto& X = value(x);
    if (X.rows != batch * seq) throw Error(ErrorCode::ShapeMismatch, "mean_pool");
    Tensor<T> out(batch, X.cols);
    const T inv = T(1) / static_cast<T>(seq);
    for (std::size_t b = 0; b < batch; ++b) {
      T* o = out.row(b);
      for (std::size_t i = 0; i < seq; ++i) {
        const T* r = X.row(b * seq + i);
        for (std::size_t j = 0; j < X.cols; ++j) o[j] += r[j];
      }
      for (std::size_t j = 0; j < X.cols; ++j) o[j] *= inv;
    }
    const Var o = push(std::move(out), needs(x));
    set_backward(o, [this, x, o, batch, seq, inv] {
      const auto& g = nodes_[o].grad;
      auto& gx = grad_ref(x);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* gb = g.row(b);
        for (std::size_t i = 0; i < seq; ++i) {
          T* r = gx.row(b * seq + i);
          for (std::size_t j = 0; j < g.cols; ++j) r[j] += gb[j] * inv;
        }
      }
    });
    return o;
  }

  /// (B*T) x d -> B x d, first row of each block.
  Var first_of_block(Var x, std::size_t batch, std::size_t seq) {
    const auto& X = value(x);
    if (X.rows != batch * seq) throw Error(ErrorCode::ShapeMismatch, "first_of_block");
    Tensor<T> out(batch, X.cols);
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(X.row(b * seq), X.cols, out.row(b));
    const Var o = push(std::move(out), needs(x));
    set_backward(o, [this, x, o, seq] {
      const auto& g = nodes_[o].grad;
      auto& gx = grad_ref(x);
      for (std::size_t b = 0; b < g.rows; ++b) {
        T* r = gx.row(b * seq);
        for (std::size_t j = 0; j < g.cols; ++j) r[j] += g(b, j);
      }
    });
    return o;
  }

  /// Inserts token[1 x d] before each block of T rows: (B*T) x d -> (B*(T+1)) x d.
  Var prepend_token(Var x, Var token, std::size_t batch, std::size_t seq) {
    const auto& X = value(x);
    const auto& Tk = value(token);
    if (X.rows != batch * seq || Tk.rows != 1 || Tk.cols != X.cols) {
      throw Error(ErrorCode::ShapeMismatch, "prepend_token");
    }
    Tensor<T> out(batch * (seq + 1), X.cols);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(Tk.data.data(), X.cols, out.row(b * (seq + 1)));
      for (std::size_t i = 0; i < seq; ++i) std::copy_n(X.row(b * seq + i), X.cols, out.row(b * (seq + 1) + 1 + i));
    }
    const Var o = push(std::move(out), needs(x) || needs(token));
    set_backward(o, [this, x, token, o, batch, seq] {
      const auto& g = nodes_[o].grad;
      for (std::size_t b = 0; b < batch; ++b) {
        if (needs(token)) {
          auto& gt = grad_ref(token);
          for (std::size_t j = 0; j < g.cols; ++j) gt.data[j] += g(b * (seq + 1), j);
        }
        if (needs(x)) {
          auto& gx = grad_ref(x);
          for (std::size_t i = 0; i < seq; ++i) {
            const T* r = g.row(b * (seq + 1) + 1 + i);
            T* d = gx.row(b * seq + i);
            for (std::size_t j = 0; j < g.cols; ++j) d[j] += r[j];
          }
        }
      }
    });
    return o;
  }

  /// Mean softmax cross-entropy of logits[B x C] against class indices; 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> labels) {
    const auto& L = value(logits);
    if (labels.size() != L.rows) throw Error(ErrorCode::ShapeMismatch, "cross_entropy labels");
    Tensor<T> probs(L.rows, L.cols);
    T total = T(0);
    for (std::size_t i = 0; i < L.rows; ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= L.cols) throw Error(ErrorCode::ShapeMismatch, "label index");
      const T* r = L.row(i);
      const T mx = *std::max_element(r, r + L.cols);
      T z = T(0);
      for (std::size_t j = 0; j < L.cols; ++j) z += std::exp(r[j] - mx);
      for (std::size_t j = 0; j < L.cols; ++j) probs(i, j) = std::exp(r[j] - mx) / z;
      total += -(r[y] - mx - std::log(z));
    }
    Tensor<T> out(1, 1, total / static_cast<T>(L.rows));
    std::vector<int> ys(labels.begin(), labels.end());
    const Var o = push(std::move(out), needs(logits));
    set_backward(o, [this, logits, o, probs = std::move(probs), ys = std::move(ys)] {
      const T g = nodes_[o].grad.data[0] / static_cast<T>(probs.rows);
      auto& gl = grad_ref(logits);
      for (std::size_t i = 0; i < probs.rows; ++i) {
        for (std::size_t j = 0; j < probs.cols; ++j) {
          gl(i, j) += g * (probs(i, j) - (static_cast<int>(j) == ys[i] ? T(1) : T(0)));
        }
      }
    });
    return o;
  }

  void backward(Var root) {
    auto& r = nodes_[root];
    r.grad = Tensor<T>(r.value.rows, r.value.cols, T(1));
    for (std::size_t i = root + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.data.empty()) n.backward();
    }
  }

  /// Probabilities of the most recent attention call, (B*H*T) x T; kept
  /// only while recording is enabled.
  const Tensor<T>& attention_probs() const { return last_attention_; }
  void record_attention(bool on) { record_attention_ = on; }

 private:
  Var push(Tensor<T> v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void set_backward(Var o, std::function<void()> fn) {
    if (nodes_[o].requires_grad) nodes_[o].backward = std::move(fn);
  }

  bool needs(Var v) const { return nodes_[v].requires_grad; }

  Tensor<T>& grad_ref(Var v) {
    auto& n = nodes_[v];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.rows, n.value.cols);
    return n.grad;
  }

  static void axpy(const Tensor<T>& g, Tensor<T>& dst) {
    for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
  }

  std::vector<Node> nodes_;
  Tensor<T> last_attention_;
  bool record_attention_ = false;
};

}  // namespace lcip::ad
