#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ivd/ops.hpp"
#include "ivd/tensor.hpp"

namespace ivd {

// Eagerly evaluated op graph. Recording an op runs its forward kernel
// immediately and stores a backward thunk; backward() replays the thunks in
// reverse creation order (creation order is a topological order because ops
// can only reference earlier ids). Multiply-add counts accumulate as ops are
// recorded, so a finished tape doubles as the cost ledger entry for the
// subgraph it holds.
template <class T>
class TapeT {
 public:
  using Id = int;

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  Id value(TensorT<T> t, bool needs_grad = true) {
    return push(std::move(t), needs_grad, 0, nullptr);
  }

  Id conv2d(Id x, Id w, Id bias, const ConvSpec& spec) {
    const TensorT<T>* b = bias >= 0 ? &out(bias) : nullptr;
    TensorT<T> y = conv2d_forward(out(x), out(w), b, spec);
    const long long m =
        spec.macs(y.dim(2), y.dim(3)) * static_cast<long long>(y.dim(0));
    Id id = push(std::move(y), needs(x) || needs(w) || (bias >= 0 && needs(bias)), m, nullptr);
    nodes_[id].back = [this, id, x, w, bias, spec]() {
      ConvGrads<T> g = conv2d_backward(out(x), out(w), spec, grad_of(id));
      accum(x, std::move(g.gx));
      accum(w, std::move(g.gw));
      if (bias >= 0) accum(bias, std::move(g.gbias));
    };
    return id;
  }

  Id activation(Id x, Act kind) {
    Id id = push(activation_forward(out(x), kind), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, kind]() {
      accum(x, activation_backward(out(x), out(id), kind, grad_of(id)));
    };
    return id;
  }

  Id concat_channels(std::vector<Id> xs) {
    std::vector<const TensorT<T>*> ptrs;
    bool ng = false;
    for (Id i : xs) {
      ptrs.push_back(&out(i));
      ng = ng || needs(i);
    }
    Id id = push(concat_channels_forward(ptrs), ng, 0, nullptr);
    nodes_[id].back = [this, id, xs]() {
      const TensorT<T>& g = grad_of(id);
      int c0 = 0;
      for (Id i : xs) {
        const int c = out(i).dim(1);
        accum(i, slice_channels_forward(g, c0, c));
        c0 += c;
      }
    };
    return id;
  }

  Id slice_channels(Id x, int c0, int count) {
    Id id = push(slice_channels_forward(out(x), c0, count), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, c0, count]() {
      const TensorT<T>& g = grad_of(id);
      TensorT<T> gx(out(x).shape());
      const int n_batch = gx.dim(0), h = gx.dim(2), w = gx.dim(3);
      const long long plane = static_cast<long long>(h) * w;
      for (int n = 0; n < n_batch; ++n) {
        std::copy(g.data() + static_cast<long long>(n) * count * plane,
                  g.data() + static_cast<long long>(n + 1) * count * plane,
                  gx.data() + (static_cast<long long>(n) * gx.dim(1) + c0) * plane);
      }
      accum(x, std::move(gx));
    };
    return id;
  }

  Id pool(Id x, PoolSpec spec) {
    auto argmax = std::make_shared<std::vector<long long>>();
    Id id = push(pool_forward(out(x), spec, argmax.get()), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, spec, argmax]() {
      accum(x, pool_backward(out(x), spec, *argmax, grad_of(id)));
    };
    return id;
  }

  Id fully_connected(Id x, Id w, Id bias) {
    const TensorT<T>* b = bias >= 0 ? &out(bias) : nullptr;
    TensorT<T> y = fully_connected_forward(out(x), out(w), b);
    const long long m = static_cast<long long>(out(w).dim(0)) * out(w).dim(1) * y.dim(0);
    Id id = push(std::move(y), needs(x) || needs(w) || (bias >= 0 && needs(bias)), m, nullptr);
    nodes_[id].back = [this, id, x, w, bias]() {
      const TensorT<T>& g = grad_of(id);
      const TensorT<T>& xv = out(x);
      const TensorT<T>& wv = out(w);
      const int n_batch = xv.dim(0);
      const long long in_dim = xv.numel() / n_batch;
      const int out_dim = wv.dim(0);
      TensorT<T> gx(xv.shape());
      TensorT<T> gw(wv.shape());
      TensorT<T> gb({out_dim});
      for (int n = 0; n < n_batch; ++n) {
        const T* xrow = xv.data() + n * in_dim;
        T* gxrow = gx.data() + n * in_dim;
        for (int o = 0; o < out_dim; ++o) {
          const T gv = g.at2(n, o);
          const T* wrow = wv.data() + static_cast<long long>(o) * in_dim;
          T* gwrow = gw.data() + static_cast<long long>(o) * in_dim;
          for (long long i = 0; i < in_dim; ++i) {
            gxrow[i] += wrow[i] * gv;
            gwrow[i] += xrow[i] * gv;
          }
          gb[o] += gv;
        }
      }
      accum(x, std::move(gx));
      accum(w, std::move(gw));
      if (bias >= 0) accum(bias, std::move(gb));
    };
    return id;
  }

  Id add(Id a, Id b) { return elementwise(a, b, EwKind::Add); }
  Id sub(Id a, Id b) { return elementwise(a, b, EwKind::Sub); }

  // (1, per_cell*cols, H, W) -> (H*W*per_cell, cols); row r = (y*W + x)*per_cell + a.
  // Pure permutation used to lay prediction maps out one row per anchor.
  Id anchor_rows(Id x, int per_cell, int cols) {
    const TensorT<T>& xv = out(x);
    if (xv.rank() != 4 || xv.dim(0) != 1 || xv.dim(1) != per_cell * cols) {
      throw std::invalid_argument("anchor_rows expects (1," + std::to_string(per_cell * cols) +
                                  ",H,W), got " + xv.shape_str());
    }
    const int h = xv.dim(2), w = xv.dim(3);
    TensorT<T> y({h * w * per_cell, cols});
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < w; ++xx) {
        for (int a = 0; a < per_cell; ++a) {
          for (int k = 0; k < cols; ++k) {
            y.at2((yy * w + xx) * per_cell + a, k) = xv.at(0, a * cols + k, yy, xx);
          }
        }
      }
    }
    Id id = push(std::move(y), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, per_cell, cols, h, w]() {
      const TensorT<T>& g = grad_of(id);
      TensorT<T> gx(out(x).shape());
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
          for (int a = 0; a < per_cell; ++a) {
            for (int k = 0; k < cols; ++k) {
              gx.at(0, a * cols + k, yy, xx) = g.at2((yy * w + xx) * per_cell + a, k);
            }
          }
        }
      }
      accum(x, std::move(gx));
    };
    return id;
  }

  Id mul(Id a, Id b) {
    // Elementwise products are the only non-conv/FC multiplies in the ledger.
    TensorT<T> y = elementwise_forward(out(a), out(b), EwKind::Mul);
    const long long m = y.numel();
    Id id = push(std::move(y), needs(a) || needs(b), m, nullptr);
    nodes_[id].back = [this, id, a, b]() {
      accum(a, elementwise_forward(grad_of(id), out(b), EwKind::Mul));
      accum(b, elementwise_forward(grad_of(id), out(a), EwKind::Mul));
    };
    return id;
  }

  Id scale(Id x, double k) {
    TensorT<T> y(out(x).shape());
    for (long long i = 0; i < y.numel(); ++i) y[i] = out(x)[i] * static_cast<T>(k);
    Id id = push(std::move(y), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, k]() {
      const TensorT<T>& g = grad_of(id);
      TensorT<T> gx(g.shape());
      for (long long i = 0; i < g.numel(); ++i) gx[i] = g[i] * static_cast<T>(k);
      accum(x, std::move(gx));
    };
    return id;
  }

  Id fake_quant(Id x, const QuantParams& p) {
    // Simulated 8-bit rounding; contributes no multiply-adds.
    Id id = push(fake_quant_forward(out(x), p), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, p]() {
      accum(x, fake_quant_backward(out(x), p, grad_of(id)));
    };
    return id;
  }

  // sum_i weight[i] * x[i], as a scalar.
  Id weighted_sum(Id x, TensorT<T> weight) {
    if (!out(x).same_shape(weight)) {
      throw std::invalid_argument("weighted_sum weight shape mismatch");
    }
    T acc = 0;
    for (long long i = 0; i < weight.numel(); ++i) acc += out(x)[i] * weight[i];
    Id id = push(TensorT<T>({1}, {acc}), needs(x), 0, nullptr);
    nodes_[id].back = [this, id, x, weight = std::move(weight)]() {
      const T gv = grad_of(id)[0];
      TensorT<T> gx(weight.shape());
      for (long long i = 0; i < weight.numel(); ++i) gx[i] = gv * weight[i];
      accum(x, std::move(gx));
    };
    return id;
  }

  // Weighted softmax cross-entropy over rows of a (rows, classes) tensor:
  // sum_r weight[r] * -log softmax(logits[r])[target[r]]. Rows with zero
  // weight contribute nothing.
  Id softmax_cross_entropy(Id logits, std::vector<int> targets, std::vector<T> weights) {
    const TensorT<T>& lg = out(logits);
    if (lg.rank() != 2) throw std::invalid_argument("softmax_ce expects rank-2 logits");
    const int rows = lg.dim(0), k = lg.dim(1);
    if (static_cast<int>(targets.size()) != rows || static_cast<int>(weights.size()) != rows) {
      throw std::invalid_argument("softmax_ce targets/weights length mismatch");
    }
    auto probs = std::make_shared<TensorT<T>>(lg.shape());
    T loss = 0;
    for (int r = 0; r < rows; ++r) {
      const T* row = lg.data() + static_cast<long long>(r) * k;
      T mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T denom = 0;
      for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
      for (int j = 0; j < k; ++j) {
        probs->at2(r, j) = std::exp(row[j] - mx) / denom;
      }
      if (weights[r] != T(0)) {
        loss -= weights[r] * (row[targets[static_cast<std::size_t>(r)]] - mx - std::log(denom));
      }
    }
    Id id = push(TensorT<T>({1}, {loss}), needs(logits), 0, nullptr);
    nodes_[id].back = [this, id, logits, targets = std::move(targets),
                       weights = std::move(weights), probs]() {
      const T gv = grad_of(id)[0];
      TensorT<T> gl(out(logits).shape());
      const int rows = gl.dim(0), k = gl.dim(1);
      for (int r = 0; r < rows; ++r) {
        if (weights[static_cast<std::size_t>(r)] == T(0)) continue;
        const T wr = weights[static_cast<std::size_t>(r)] * gv;
        for (int j = 0; j < k; ++j) {
          const T ind = (j == targets[static_cast<std::size_t>(r)]) ? T(1) : T(0);
          gl.at2(r, j) = wr * (probs->at2(r, j) - ind);
        }
      }
      accum(logits, std::move(gl));
    };
    return id;
  }

  // Per-element weighted smooth-L1 against a constant target.
  Id smooth_l1(Id pred, TensorT<T> target, TensorT<T> weight) {
    const TensorT<T>& p = out(pred);
    if (!p.same_shape(target) || !p.same_shape(weight)) {
      throw std::invalid_argument("smooth_l1 target/weight shape mismatch");
    }
    T loss = 0;
    for (long long i = 0; i < p.numel(); ++i) {
      const T d = p[i] - target[i];
      const T a = std::abs(d);
      loss += weight[i] * (a < T(1) ? T(0.5) * d * d : a - T(0.5));
    }
    Id id = push(TensorT<T>({1}, {loss}), needs(pred), 0, nullptr);
    nodes_[id].back = [this, id, pred, target = std::move(target),
                       weight = std::move(weight)]() {
      const T gv = grad_of(id)[0];
      TensorT<T> gp(out(pred).shape());
      for (long long i = 0; i < gp.numel(); ++i) {
        const T d = out(pred)[i] - target[i];
        gp[i] = gv * weight[i] * (std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1)));
      }
      accum(pred, std::move(gp));
    };
    return id;
  }

  // Mean squared error between q[n, action[n]] and target[n]; the DDQN
  // regression objective.
  Id q_select_mse(Id q, std::vector<int> actions, std::vector<T> targets) {
    const TensorT<T>& qv = out(q);
    if (qv.rank() != 2) throw std::invalid_argument("q_select_mse expects rank-2 q-values");
    const int n = qv.dim(0);
    if (static_cast<int>(actions.size()) != n || static_cast<int>(targets.size()) != n) {
      throw std::invalid_argument("q_select_mse actions/targets length mismatch");
    }
    T loss = 0;
    for (int r = 0; r < n; ++r) {
      const T d = qv.at2(r, actions[static_cast<std::size_t>(r)]) -
                  targets[static_cast<std::size_t>(r)];
      loss += d * d;
    }
    loss /= static_cast<T>(n);
    Id id = push(TensorT<T>({1}, {loss}), needs(q), 0, nullptr);
    nodes_[id].back = [this, id, q, actions = std::move(actions),
                       targets = std::move(targets)]() {
      const T gv = grad_of(id)[0];
      const TensorT<T>& qv = out(q);
      TensorT<T> gq(qv.shape());
      const int n = qv.dim(0);
      for (int r = 0; r < n; ++r) {
        const int a = actions[static_cast<std::size_t>(r)];
        gq.at2(r, a) = gv * T(2) / static_cast<T>(n) *
                       (qv.at2(r, a) - targets[static_cast<std::size_t>(r)]);
      }
      accum(q, std::move(gq));
    };
    return id;
  }

  const TensorT<T>& tensor(Id id) const { return out(id); }

  void backward(Id root) {
    if (root < 0 || root >= static_cast<Id>(nodes_.size())) {
      throw std::invalid_argument("backward on unknown value id");
    }
    if (out(root).numel() != 1) {
      throw std::invalid_argument("backward root must be scalar, got shape " +
                                  out(root).shape_str());
    }
    TensorT<T> seed(out(root).shape());
    seed[0] = T(1);
    accum(root, std::move(seed));
    for (Id id = root; id >= 0; --id) {
      if (nodes_[id].has_grad && nodes_[id].back && nodes_[id].needs_grad) {
        nodes_[id].back();
      }
    }
    backward_done_ = true;
  }

  const TensorT<T>& grad(Id id) {
    if (!backward_done_) {
      throw std::logic_error("gradient requested before backward() ran on this graph");
    }
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.has_grad) {
      n.grad = TensorT<T>(n.out.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  long long macs() const { return macs_; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    TensorT<T> out;
    TensorT<T> grad;
    bool has_grad = false;
    bool needs_grad = true;
    std::function<void()> back;
  };

  Id elementwise(Id a, Id b, EwKind kind) {
    Id id = push(elementwise_forward(out(a), out(b), kind), needs(a) || needs(b), 0, nullptr);
    nodes_[id].back = [this, id, a, b, kind]() {
      const TensorT<T>& g = grad_of(id);
      accum(a, TensorT<T>(g));
      if (kind == EwKind::Add) {
        accum(b, TensorT<T>(g));
      } else {
        TensorT<T> neg(g.shape());
        for (long long i = 0; i < g.numel(); ++i) neg[i] = -g[i];
        accum(b, std::move(neg));
      }
    };
    return id;
  }

  Id push(TensorT<T> t, bool needs_grad, long long op_macs, std::function<void()> back) {
    Node n;
    n.out = std::move(t);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    macs_ += op_macs;
    return static_cast<Id>(nodes_.size()) - 1;
  }

  const TensorT<T>& out(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).out; }
  bool needs(Id id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }

  const TensorT<T>& grad_of(Id id) const { return nodes_[id].grad; }

  void accum(Id id, TensorT<T> g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      for (long long i = 0; i < n.grad.numel(); ++i) n.grad[i] += g[i];
    }
  }

  std::vector<Node> nodes_;
  long long macs_ = 0;
  bool backward_done_ = false;
};

using Tape = TapeT<float>;
using DTape = TapeT<double>;

}  // namespace ivd
