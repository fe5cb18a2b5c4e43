#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/core/tensor.hpp"

namespace affordsplat::core {

// C[m,n] = (accum ? C : 0) + op(A) * op(B) on row-major data.
template <typename S>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
          const S* A, const S* B, S* C, bool accum) {
  if (!accum) std::fill(C, C + m * n, S(0));
  if (!ta && !tb) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t p = 0; p < k; ++p) {
        const S a = A[i * k + p];
        if (a == S(0)) continue;
        const S* brow = B + p * n;
        S* crow = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else if (!ta && tb) {
    // B stored as [n,k]
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        S acc = 0;
        const S* arow = A + i * k;
        const S* brow = B + j * k;
        for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        C[i * n + j] += acc;
      }
  } else if (ta && !tb) {
    // A stored as [k,m]
    for (std::int64_t p = 0; p < k; ++p)
      for (std::int64_t i = 0; i < m; ++i) {
        const S a = A[p * m + i];
        if (a == S(0)) continue;
        const S* brow = B + p * n;
        S* crow = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else {
    // A [k,m], B [n,k]
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        S acc = 0;
        for (std::int64_t p = 0; p < k; ++p) acc += A[p * m + i] * B[j * k + p];
        C[i * n + j] += acc;
      }
  }
}

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<S>(value.shape());
    grad.fill(S(0));
  }
};

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<S>& val() const;
};

// Reverse-mode autodiff tape. Nodes are appended in topological order during
// the forward pass; backward() walks them in reverse. Values and gradients
// live on the tape; parameter gradients are flushed into their Parameter
// after the sweep.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Tensor<S> v) { return push(std::move(v), false, nullptr); }

  Var<S> leaf(Tensor<S> v, bool needs_grad = true) {
    return push(std::move(v), needs_grad, nullptr);
  }

  Var<S> param(Parameter<S>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return Var<S>{this, it->second};
    Var<S> v = push(p.value, true, nullptr);
    param_vars_[&p] = v.id;
    param_list_.push_back({v.id, &p});
    return v;
  }

  const Tensor<S>& value(int id) const { return nodes_[(std::size_t)id].value; }

  const Tensor<S>& grad(Var<S> v) {
    return grad_buf(v.id);
  }

  bool needs_grad(int id) const { return nodes_[(std::size_t)id].needs_grad; }

  Tensor<S>& grad_buf(int id) {
    Node& n = nodes_[(std::size_t)id];
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  bool grad_present(int id) const {
    return nodes_[(std::size_t)id].grad.numel() ==
           nodes_[(std::size_t)id].value.numel();
  }

  void backward(Var<S> loss) {
    if (loss.tape != this) throw ContractError("backward on foreign var");
    if (value(loss.id).numel() != 1)
      throw ArgumentError("backward requires a scalar loss");
    grad_buf(loss.id)[0] = S(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[(std::size_t)id];
      if (n.back && n.needs_grad && grad_present(id)) n.back();
    }
    for (auto& [id, p] : param_list_) {
      if (!grad_present(id)) continue;
      if (p->grad.numel() != p->value.numel()) p->zero_grad();
      const Tensor<S>& g = nodes_[(std::size_t)id].grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // --- internal: used by the free-function ops below ---
  Var<S> push(Tensor<S> v, bool needs_grad, std::function<void()> back) {
    nodes_.push_back(Node{std::move(v), Tensor<S>(), std::move(back), needs_grad});
    return Var<S>{this, static_cast<int>(nodes_.size() - 1)};
  }

  void set_back(int id, std::function<void()> back) {
    nodes_[(std::size_t)id].back = std::move(back);
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> back;
    bool needs_grad = false;
  };
  // Deque: references returned by value()/grad_buf() stay valid across
  // later pushes.
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<S>*, int> param_vars_;
  std::vector<std::pair<int, Parameter<S>*>> param_list_;
};

template <typename S>
const Tensor<S>& Var<S>::val() const {
  return tape->value(id);
}

namespace detail {

template <typename S>
Tape<S>* same_tape(Var<S> a, Var<S> b) {
  if (a.tape != b.tape) throw ContractError("vars from different tapes");
  return a.tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting.
// ---------------------------------------------------------------------------

template <typename S, typename FwdFn, typename BackFn>
Var<S> binary_op(Var<S> a, Var<S> b, FwdFn fwd, BackFn back_fill) {
  Tape<S>* T = detail::same_tape(a, b);
  // Copies: push() below may reallocate the node vector.
  const Shape sa = a.val().shape();
  const Shape sb = b.val().shape();
  const Shape so = broadcast_shape(sa, sb);
  Tensor<S> out(so);
  {
    const Tensor<S>& va = T->value(a.id);
    const Tensor<S>& vb = T->value(b.id);
    for_each_broadcast(so, sa, sb,
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                         out[o] = fwd(va[ia], vb[ib]);
                       });
  }
  bool ng = T->needs_grad(a.id) || T->needs_grad(b.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, bid = b.id, rid = r.id;
    Shape sa2 = sa, sb2 = sb, so2 = so;
    T->set_back(rid, [T, aid, bid, rid, sa2, sb2, so2, back_fill]() {
      const Tensor<S>& va = T->value(aid);
      const Tensor<S>& vb = T->value(bid);
      const Tensor<S>& go = T->grad_buf(rid);
      const Tensor<S>& vo = T->value(rid);
      const bool na = T->needs_grad(aid);
      const bool nb = T->needs_grad(bid);
      Tensor<S>* ga = na ? &T->grad_buf(aid) : nullptr;
      Tensor<S>* gb = nb ? &T->grad_buf(bid) : nullptr;
      for_each_broadcast(so2, sa2, sb2,
                         [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                           back_fill(go[o], va[ia], vb[ib], vo[o],
                                     ga ? &(*ga)[ia] : nullptr,
                                     gb ? &(*gb)[ib] : nullptr);
                         });
    });
  }
  return r;
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return binary_op<S>(
      a, b, [](S x, S y) { return x + y; },
      [](S g, S, S, S, S* ga, S* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return binary_op<S>(
      a, b, [](S x, S y) { return x - y; },
      [](S g, S, S, S, S* ga, S* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return binary_op<S>(
      a, b, [](S x, S y) { return x * y; },
      [](S g, S x, S y, S, S* ga, S* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  return binary_op<S>(
      a, b, [](S x, S y) { return x / y; },
      [](S g, S x, S y, S, S* ga, S* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

// ---------------------------------------------------------------------------
// Unary ops.
// ---------------------------------------------------------------------------

template <typename S, typename FwdFn, typename DFn>
Var<S> unary_op(Var<S> a, FwdFn fwd, DFn dfn) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  Tensor<S> out(va.shape());
  for (std::int64_t i = 0; i < va.numel(); ++i) out[i] = fwd(va[i]);
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, dfn]() {
      const Tensor<S>& va = T->value(aid);
      const Tensor<S>& vo = T->value(rid);
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t i = 0; i < va.numel(); ++i)
        ga[i] += go[i] * dfn(va[i], vo[i]);
    });
  }
  return r;
}

template <typename S>
Var<S> neg(Var<S> a) {
  return unary_op<S>(a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <typename S>
Var<S> vexp(Var<S> a) {
  return unary_op<S>(a, [](S x) { return std::exp(x); },
                     [](S, S y) { return y; });
}

template <typename S>
Var<S> vlog(Var<S> a) {
  return unary_op<S>(a, [](S x) { return std::log(x); },
                     [](S x, S) { return S(1) / x; });
}

template <typename S>
Var<S> vsqrt(Var<S> a) {
  return unary_op<S>(a, [](S x) { return std::sqrt(x); },
                     [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Var<S> vtanh(Var<S> a) {
  return unary_op<S>(a, [](S x) { return std::tanh(x); },
                     [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return unary_op<S>(a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
                     [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> gelu(Var<S> a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op<S>(
      a,
      [](S x) {
        return S(0.5) * x *
               (S(1) + S(std::erf(static_cast<double>(x) * inv_sqrt2)));
      },
      [](S x, S) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return S(cdf + xd * pdf);
      });
}

template <typename S>
Var<S> relu(Var<S> a) {
  return unary_op<S>(a, [](S x) { return x > S(0) ? x : S(0); },
                     [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  return unary_op<S>(a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <typename S>
Var<S> mul_scalar(Var<S> a, S c) {
  return unary_op<S>(a, [c](S x) { return x * c; }, [c](S, S) { return c; });
}

// Straight-through binarization. Forward is a hard 0.5 threshold (or the
// identity when relaxed); backward always passes the gradient unchanged.
template <typename S>
Var<S> ste_threshold(Var<S> a, bool relaxed = false) {
  if (relaxed)
    return unary_op<S>(a, [](S x) { return x; }, [](S, S) { return S(1); });
  return unary_op<S>(a, [](S x) { return x >= S(0.5) ? S(1) : S(0); },
                     [](S, S) { return S(1); });
}

// ---------------------------------------------------------------------------
// Matmul: a [..., m, k] x b [..., k, n]. Batch dims must match exactly, or b
// may be rank-2 and is then shared across all leading dims of a.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>* T = detail::same_tape(a, b);
  const Tensor<S>& va = T->value(a.id);
  const Tensor<S>& vb = T->value(b.id);
  if (va.rank() < 2 || vb.rank() < 2)
    throw ArgumentError("matmul requires rank >= 2");
  const std::int64_t m = va.dim(-2), k = va.dim(-1);
  const std::int64_t kb = vb.dim(-2), n = vb.dim(-1);
  if (k != kb)
    throw ArgumentError("matmul inner dims mismatch: " +
                        shape_str(va.shape()) + " x " + shape_str(vb.shape()));
  const bool b_shared = vb.rank() == 2 && va.rank() > 2;
  if (!b_shared && va.rank() != vb.rank())
    throw ArgumentError("matmul batch ranks mismatch");
  std::int64_t batches = 1;
  Shape oshape;
  for (int i = 0; i < va.rank() - 2; ++i) {
    batches *= va.dim(i);
    oshape.push_back(va.dim(i));
    if (!b_shared && vb.dim(i) != va.dim(i))
      throw ArgumentError("matmul batch dims mismatch");
  }
  oshape.push_back(m);
  oshape.push_back(n);
  Tensor<S> out(oshape);
  for (std::int64_t bi = 0; bi < batches; ++bi)
    gemm<S>(false, false, m, n, k, va.data() + bi * m * k,
            vb.data() + (b_shared ? 0 : bi * k * n), out.data() + bi * m * n,
            false);
  const bool ng = T->needs_grad(a.id) || T->needs_grad(b.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, bid = b.id, rid = r.id;
    T->set_back(rid, [T, aid, bid, rid, m, n, k, batches, b_shared]() {
      const Tensor<S>& va = T->value(aid);
      const Tensor<S>& vb = T->value(bid);
      const Tensor<S>& go = T->grad_buf(rid);
      if (T->needs_grad(aid)) {
        Tensor<S>& ga = T->grad_buf(aid);
        for (std::int64_t bi = 0; bi < batches; ++bi)
          gemm<S>(false, true, m, k, n, go.data() + bi * m * n,
                  vb.data() + (b_shared ? 0 : bi * k * n),
                  ga.data() + bi * m * k, true);
      }
      if (T->needs_grad(bid)) {
        Tensor<S>& gb = T->grad_buf(bid);
        for (std::int64_t bi = 0; bi < batches; ++bi)
          gemm<S>(true, false, k, n, m, va.data() + bi * m * k,
                  go.data() + bi * m * n, gb.data() + (b_shared ? 0 : bi * k * n),
                  true);
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(Var<S> a, Shape s) {
  Tape<S>* T = a.tape;
  Tensor<S> out = T->value(a.id).reshaped(std::move(s));
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
  }
  return r;
}

template <typename S>
Var<S> transpose_last2(Var<S> a) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  if (va.rank() < 2) throw ArgumentError("transpose_last2 requires rank >= 2");
  const std::int64_t m = va.dim(-2), n = va.dim(-1);
  std::int64_t batches = va.numel() / (m * n);
  Shape os = va.shape();
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<S> out(os);
  for (std::int64_t bi = 0; bi < batches; ++bi) {
    const S* src = va.data() + bi * m * n;
    S* dst = out.data() + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, m, n, batches]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t bi = 0; bi < batches; ++bi) {
        const S* src = go.data() + bi * m * n;
        S* dst = ga.data() + bi * m * n;
        for (std::int64_t j = 0; j < n; ++j)
          for (std::int64_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
      }
    });
  }
  return r;
}

// [a,b,c,d] -> [a,c,b,d]
template <typename S>
Var<S> permute_0213(Var<S> a) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  if (va.rank() != 4) throw ArgumentError("permute_0213 requires rank 4");
  const std::int64_t A = va.dim(0), B = va.dim(1), C = va.dim(2), D = va.dim(3);
  Tensor<S> out({A, C, B, D});
  for (std::int64_t i = 0; i < A; ++i)
    for (std::int64_t j = 0; j < B; ++j)
      for (std::int64_t l = 0; l < C; ++l) {
        const S* src = va.data() + ((i * B + j) * C + l) * D;
        S* dst = out.data() + ((i * C + l) * B + j) * D;
        std::copy(src, src + D, dst);
      }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, A, B, C, D]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t i = 0; i < A; ++i)
        for (std::int64_t l = 0; l < C; ++l)
          for (std::int64_t j = 0; j < B; ++j) {
            const S* src = go.data() + ((i * C + l) * B + j) * D;
            S* dst = ga.data() + ((i * B + j) * C + l) * D;
            for (std::int64_t t = 0; t < D; ++t) dst[t] += src[t];
          }
    });
  }
  return r;
}

namespace detail {
inline void axis_extents(const Shape& s, int axis, std::int64_t& outer,
                         std::int64_t& len, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[(std::size_t)i];
  len = s[(std::size_t)axis];
  for (std::size_t i = (std::size_t)axis + 1; i < s.size(); ++i)
    inner *= s[i];
}
inline int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ArgumentError("axis out of range");
  return axis;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_axis(Var<S> a, int axis, bool keepdim = false) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  axis = detail::norm_axis(axis, va.rank());
  std::int64_t outer, len, inner;
  detail::axis_extents(va.shape(), axis, outer, len, inner);
  Shape os = va.shape();
  if (keepdim)
    os[(std::size_t)axis] = 1;
  else
    os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor<S> out(os);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t l = 0; l < len; ++l) {
      const S* src = va.data() + (o * len + l) * inner;
      S* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, outer, len, inner]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t l = 0; l < len; ++l) {
          S* dst = ga.data() + (o * len + l) * inner;
          const S* src = go.data() + o * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return r;
}

template <typename S>
Var<S> mean_axis(Var<S> a, int axis, bool keepdim = false) {
  const std::int64_t len =
      a.val().dim(detail::norm_axis(axis, a.val().rank()));
  return mul_scalar(sum_axis(a, axis, keepdim), S(1) / S(len));
}

template <typename S>
Var<S> max_axis(Var<S> a, int axis, bool keepdim = false) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  axis = detail::norm_axis(axis, va.rank());
  std::int64_t outer, len, inner;
  detail::axis_extents(va.shape(), axis, outer, len, inner);
  Shape os = va.shape();
  if (keepdim)
    os[(std::size_t)axis] = 1;
  else
    os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor<S> out(os);
  std::vector<std::int64_t> argmax((std::size_t)(outer * inner), 0);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      S best = va[(o * len) * inner + i];
      std::int64_t bl = 0;
      for (std::int64_t l = 1; l < len; ++l) {
        const S v = va[(o * len + l) * inner + i];
        if (v > best) {
          best = v;
          bl = l;
        }
      }
      out[o * inner + i] = best;
      argmax[(std::size_t)(o * inner + i)] = bl;
    }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, outer, len, inner, argmax]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t l = argmax[(std::size_t)(o * inner + i)];
          ga[(o * len + l) * inner + i] += go[o * inner + i];
        }
    });
  }
  return r;
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Var<S> flat = reshape(a, {a.val().numel()});
  return sum_axis(flat, 0);
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return mul_scalar(sum_all(a), S(1) / S(a.val().numel()));
}

// Repeat a size-1 axis n times.
template <typename S>
Var<S> expand_axis(Var<S> a, int axis, std::int64_t n) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  axis = detail::norm_axis(axis, va.rank());
  if (va.dim(axis) != 1) throw ArgumentError("expand_axis needs size-1 axis");
  std::int64_t outer, len, inner;
  detail::axis_extents(va.shape(), axis, outer, len, inner);
  Shape os = va.shape();
  os[(std::size_t)axis] = n;
  Tensor<S> out(os);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t l = 0; l < n; ++l)
      std::copy(va.data() + o * inner, va.data() + (o + 1) * inner,
                out.data() + (o * n + l) * inner);
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, outer, n, inner]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t l = 0; l < n; ++l)
          for (std::int64_t i = 0; i < inner; ++i)
            ga[o * inner + i] += go[(o * n + l) * inner + i];
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Softmax over the last axis (max-shifted; the shift is a constant and does
// not participate in the gradient).
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmax_last(Var<S> a) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  const std::int64_t C = va.dim(-1);
  const std::int64_t rows = va.numel() / C;
  Tensor<S> out(va.shape());
  for (std::int64_t rw = 0; rw < rows; ++rw) {
    const S* x = va.data() + rw * C;
    S* y = out.data() + rw * C;
    S mx = x[0];
    for (std::int64_t i = 1; i < C; ++i) mx = std::max(mx, x[i]);
    S sum = 0;
    for (std::int64_t i = 0; i < C; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::int64_t i = 0; i < C; ++i) y[i] /= sum;
  }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, C, rows]() {
      const Tensor<S>& y = T->value(rid);
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t rw = 0; rw < rows; ++rw) {
        const S* yr = y.data() + rw * C;
        const S* gr = go.data() + rw * C;
        S dot = 0;
        for (std::int64_t i = 0; i < C; ++i) dot += yr[i] * gr[i];
        S* gar = ga.data() + rw * C;
        for (std::int64_t i = 0; i < C; ++i)
          gar[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return r;
}

template <typename S>
Var<S> log_softmax_last(Var<S> a) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  const std::int64_t C = va.dim(-1);
  const std::int64_t rows = va.numel() / C;
  Tensor<S> out(va.shape());
  for (std::int64_t rw = 0; rw < rows; ++rw) {
    const S* x = va.data() + rw * C;
    S* y = out.data() + rw * C;
    S mx = x[0];
    for (std::int64_t i = 1; i < C; ++i) mx = std::max(mx, x[i]);
    S sum = 0;
    for (std::int64_t i = 0; i < C; ++i) sum += std::exp(x[i] - mx);
    const S lse = mx + std::log(sum);
    for (std::int64_t i = 0; i < C; ++i) y[i] = x[i] - lse;
  }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, C, rows]() {
      const Tensor<S>& y = T->value(rid);
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t rw = 0; rw < rows; ++rw) {
        const S* yr = y.data() + rw * C;
        const S* gr = go.data() + rw * C;
        S gsum = 0;
        for (std::int64_t i = 0; i < C; ++i) gsum += gr[i];
        S* gar = ga.data() + rw * C;
        for (std::int64_t i = 0; i < C; ++i)
          gar[i] += gr[i] - std::exp(yr[i]) * gsum;
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Indexing / slicing / joining.
// ---------------------------------------------------------------------------

// out[i, ...] = a[idx[i], ...]
template <typename S>
Var<S> take_rows(Var<S> a, std::vector<std::int64_t> idx) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  if (va.rank() < 1) throw ArgumentError("take_rows requires rank >= 1");
  const std::int64_t rows = va.dim(0);
  const std::int64_t rowsz = va.numel() / std::max<std::int64_t>(rows, 1);
  for (auto i : idx)
    if (i < 0 || i >= rows) throw ArgumentError("take_rows index out of range");
  Shape os = va.shape();
  os[0] = static_cast<std::int64_t>(idx.size());
  Tensor<S> out(os);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(va.data() + idx[i] * rowsz, va.data() + (idx[i] + 1) * rowsz,
              out.data() + static_cast<std::int64_t>(i) * rowsz);
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, idx, rowsz]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const S* src = go.data() + static_cast<std::int64_t>(i) * rowsz;
        S* dst = ga.data() + idx[i] * rowsz;
        for (std::int64_t t = 0; t < rowsz; ++t) dst[t] += src[t];
      }
    });
  }
  return r;
}

// a rank-2 [L,V], idx length L: out[i] = a[i, idx[i]].
template <typename S>
Var<S> take_last(Var<S> a, std::vector<std::int64_t> idx) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  if (va.rank() != 2) throw ArgumentError("take_last requires rank 2");
  const std::int64_t L = va.dim(0), V = va.dim(1);
  if (static_cast<std::int64_t>(idx.size()) != L)
    throw ArgumentError("take_last index length mismatch");
  Tensor<S> out({L});
  for (std::int64_t i = 0; i < L; ++i) {
    if (idx[(std::size_t)i] < 0 || idx[(std::size_t)i] >= V)
      throw ArgumentError("take_last index out of range");
    out[i] = va[i * V + idx[(std::size_t)i]];
  }
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, idx, V, L]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t i = 0; i < L; ++i)
        ga[i * V + idx[(std::size_t)i]] += go[i];
    });
  }
  return r;
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, int axis) {
  if (parts.empty()) throw ArgumentError("concat of empty list");
  Tape<S>* T = parts[0].tape;
  const int rank = T->value(parts[0].id).rank();
  axis = detail::norm_axis(axis, rank);
  Shape os = T->value(parts[0].id).shape();
  std::int64_t total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.tape != T) throw ContractError("concat across tapes");
    const Tensor<S>& v = T->value(p.id);
    if (v.rank() != rank) throw ArgumentError("concat rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && v.dim(i) != os[(std::size_t)i])
        throw ArgumentError("concat shape mismatch");
    total += v.dim(axis);
    ng = ng || T->needs_grad(p.id);
  }
  os[(std::size_t)axis] = total;
  std::int64_t outer, len, inner;
  detail::axis_extents(os, axis, outer, len, inner);
  Tensor<S> out(os);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const Tensor<S>& v = T->value(p.id);
    const std::int64_t plen = v.dim(axis);
    offsets.push_back(off);
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(v.data() + o * plen * inner, v.data() + (o + 1) * plen * inner,
                out.data() + (o * len + off) * inner);
    off += plen;
  }
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    std::vector<int> pids;
    std::vector<std::int64_t> plens;
    for (const auto& p : parts) {
      pids.push_back(p.id);
      plens.push_back(T->value(p.id).dim(axis));
    }
    int rid = r.id;
    T->set_back(rid, [T, rid, pids, plens, offsets, outer, len, inner]() {
      const Tensor<S>& go = T->grad_buf(rid);
      for (std::size_t pi = 0; pi < pids.size(); ++pi) {
        if (!T->needs_grad(pids[pi])) continue;
        Tensor<S>& ga = T->grad_buf(pids[pi]);
        const std::int64_t plen = plens[pi];
        const std::int64_t off = offsets[pi];
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* src = go.data() + (o * len + off) * inner;
          S* dst = ga.data() + o * plen * inner;
          for (std::int64_t t = 0; t < plen * inner; ++t) dst[t] += src[t];
        }
      }
    });
  }
  return r;
}

// Stack rank-r vars into rank-(r+1) along a new leading axis.
template <typename S>
Var<S> stack0(const std::vector<Var<S>>& parts) {
  std::vector<Var<S>> reshaped;
  reshaped.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.val().shape();
    s.insert(s.begin(), 1);
    reshaped.push_back(reshape(p, s));
  }
  return concat(reshaped, 0);
}

template <typename S>
Var<S> slice_axis(Var<S> a, int axis, std::int64_t start, std::int64_t count) {
  Tape<S>* T = a.tape;
  const Tensor<S>& va = T->value(a.id);
  axis = detail::norm_axis(axis, va.rank());
  if (start < 0 || count < 0 || start + count > va.dim(axis))
    throw ArgumentError("slice out of range");
  std::int64_t outer, len, inner;
  detail::axis_extents(va.shape(), axis, outer, len, inner);
  Shape os = va.shape();
  os[(std::size_t)axis] = count;
  Tensor<S> out(os);
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(va.data() + (o * len + start) * inner,
              va.data() + (o * len + start + count) * inner,
              out.data() + o * count * inner);
  bool ng = T->needs_grad(a.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int aid = a.id, rid = r.id;
    T->set_back(rid, [T, aid, rid, outer, len, inner, start, count]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& ga = T->grad_buf(aid);
      for (std::int64_t o = 0; o < outer; ++o) {
        const S* src = go.data() + o * count * inner;
        S* dst = ga.data() + (o * len + start) * inner;
        for (std::int64_t t = 0; t < count * inner; ++t) dst[t] += src[t];
      }
    });
  }
  return r;
}

// out[n, :] = sum_j weights[n, j] * src[idx[n, j], :]
// Weights and indices are constants (they come from geometry, not from
// trainable state).
template <typename S>
Var<S> linear_comb_rows(Var<S> src, const Tensor<S>& weights,
                        const Tensor<std::int64_t>& idx) {
  Tape<S>* T = src.tape;
  const Tensor<S>& vs = T->value(src.id);
  if (vs.rank() != 2 || weights.rank() != 2 || idx.rank() != 2)
    throw ArgumentError("linear_comb_rows expects rank-2 inputs");
  if (weights.shape() != idx.shape())
    throw ArgumentError("weights/idx shape mismatch");
  const std::int64_t N = weights.dim(0), k = weights.dim(1), d = vs.dim(1);
  Tensor<S> out({N, d});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t j = 0; j < k; ++j) {
      const S w = weights.at(n, j);
      const S* row = vs.data() + idx.at(n, j) * d;
      S* dst = out.data() + n * d;
      for (std::int64_t t = 0; t < d; ++t) dst[t] += w * row[t];
    }
  bool ng = T->needs_grad(src.id);
  Var<S> r = T->push(std::move(out), ng, nullptr);
  if (ng) {
    int sid = src.id, rid = r.id;
    Tensor<S> w2 = weights;
    Tensor<std::int64_t> i2 = idx;
    T->set_back(rid, [T, sid, rid, w2, i2, N, k, d]() {
      const Tensor<S>& go = T->grad_buf(rid);
      Tensor<S>& gs = T->grad_buf(sid);
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t j = 0; j < k; ++j) {
          const S w = w2.at(n, j);
          const S* src = go.data() + n * d;
          S* dst = gs.data() + i2.at(n, j) * d;
          for (std::int64_t t = 0; t < d; ++t) dst[t] += w * src[t];
        }
    });
  }
  return r;
}

// Operator sugar.
template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}
template <typename S>
Var<S> operator/(Var<S> a, Var<S> b) {
  return div(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, S c) {
  return mul_scalar(a, c);
}
template <typename S>
Var<S> operator*(S c, Var<S> a) {
  return mul_scalar(a, c);
}
template <typename S>
Var<S> operator+(Var<S> a, S c) {
  return add_scalar(a, c);
}
template <typename S>
Var<S> operator-(Var<S> a) {
  return neg(a);
}

}  // namespace affordsplat::core
