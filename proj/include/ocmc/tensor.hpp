// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ocmc {

// Dense 4-D tensor (N, C, H, W), 64-bit values, reverse-mode tape.

struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t elems() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Thread-local switch: when disabled, ops record no graph and backward is
// impossible; forward results are identical either way.
class GradMode {
 public:
  static bool enabled() { return state(); }
  static void set(bool on) { state() = on; }

 private:
  static bool& state() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }

 private:
  bool prev_;
};

class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on demand, same length as val
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // pulls this->grad into parents
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s) { return filled(s, 0.0); }

  static Tensor filled(Shape s, double v) {
    check_shape(s);
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->val.assign(static_cast<std::size_t>(s.elems()), v);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape s, std::vector<double> v) {
    check_shape(s);
    if (static_cast<std::int64_t>(v.size()) != s.elems())
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(v.size()) +
                                  " does not match shape " + s.str());
    auto n = std::make_shared<Node>();
    n->shape = s;
    n->val = std::move(v);
    return Tensor(std::move(n));
  }

  // Trainable parameter: retains gradients across backward calls.
  static Tensor param(Shape s, std::vector<double> v) {
    Tensor t = from(s, std::move(v));
    t.n_->requires_grad = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return node().shape; }
  std::int64_t elems() const { return node().shape.elems(); }
  bool requires_grad() const { return node().requires_grad; }
  bool tracked() const {
    return defined() && GradMode::enabled() &&
           (n_->requires_grad || n_->backward || !n_->parents.empty());
  }

  std::vector<double>& values() { return node().val; }
  const std::vector<double>& values() const { return node().val; }

  std::vector<double>& grad() {
    auto& nd = node();
    if (nd.grad.size() != nd.val.size()) nd.grad.assign(nd.val.size(), 0.0);
    return nd.grad;
  }

  double value0() const {
    if (elems() != 1) throw std::invalid_argument("value0: tensor is not scalar");
    return node().val[0];
  }

  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = shape();
    return node().val[((n * s.c + c) * s.h + h) * s.w + w];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = shape();
    return node().val[((n * s.c + c) * s.h + h) * s.w + w];
  }

  std::shared_ptr<Node> raw() const { return n_; }

  // Reverse-mode sweep from a scalar; parameter grads accumulate additively.
  void backward() const {
    if (elems() != 1)
      throw std::invalid_argument("backward: loss must be a scalar tensor");
    std::vector<Node*> order;
    topo(node_ptr().get(), order);
    {
      auto& g = const_cast<Tensor*>(this)->grad();
      g[0] += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* nd = *it;
      if (nd->backward) {
        if (nd->grad.size() != nd->val.size()) nd->grad.assign(nd->val.size(), 0.0);
        nd->backward(*nd);
      }
    }
  }

 private:
  std::shared_ptr<Node> n_;

  Node& node() const {
    if (!n_) throw std::invalid_argument("use of undefined tensor");
    return *n_;
  }
  const std::shared_ptr<Node>& node_ptr() const {
    if (!n_) throw std::invalid_argument("use of undefined tensor");
    return n_;
  }

  static void check_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("shape dims must be positive: " + s.str());
  }

  static void topo(Node* root, std::vector<Node*>& order) {
    // Iterative post-order DFS; the visited set is per-sweep.
    std::vector<std::pair<Node*, std::size_t>> stack;
    std::map<Node*, bool> seen;
    stack.emplace_back(root, 0);
    seen[root] = true;
    while (!stack.empty()) {
      auto& [nd, idx] = stack.back();
      if (idx < nd->parents.size()) {
        Node* p = nd->parents[idx++].get();
        if (!seen[p]) {
          seen[p] = true;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(nd);
        stack.pop_back();
      }
    }
  }
};

namespace detail {

inline Tensor make_op(Shape s, std::vector<double> val,
                      std::vector<Tensor> inputs,
                      std::function<void(Tensor::Node&)> bw) {
  Tensor out = Tensor::from(s, std::move(val));
  bool track = false;
  for (const auto& t : inputs) track = track || t.tracked();
  if (track && GradMode::enabled()) {
    auto& nd = *out.raw();
    for (const auto& t : inputs) nd.parents.push_back(t.raw());
    nd.backward = std::move(bw);
  }
  return out;
}

inline std::vector<double>& grad_of(const std::shared_ptr<Tensor::Node>& n) {
  if (n->grad.size() != n->val.size()) n->grad.assign(n->val.size(), 0.0);
  return n->grad;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.raw(), bn = b.raw();
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [an, bn](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           auto& gb = detail::grad_of(bn);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                             ga[i] += nd.grad[i];
                             gb[i] += nd.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.raw(), bn = b.raw();
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [an, bn](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           auto& gb = detail::grad_of(bn);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                             ga[i] += nd.grad[i];
                             gb[i] -= nd.grad[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.raw(), bn = b.raw();
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [an, bn](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           auto& gb = detail::grad_of(bn);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                             ga[i] += nd.grad[i] * bn->val[i];
                             gb[i] += nd.grad[i] * an->val[i];
                           }
                         });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  auto an = a.raw(), bn = b.raw();
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [an, bn](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           auto& gb = detail::grad_of(bn);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i) {
                             const double inv = 1.0 / bn->val[i];
                             ga[i] += nd.grad[i] * inv;
                             gb[i] -= nd.grad[i] * an->val[i] * inv * inv;
                           }
                         });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  auto an = a.raw();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             ga[i] += nd.grad[i];
                         });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  auto an = a.raw();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, s](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             ga[i] += nd.grad[i] * s;
                         });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor square(const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
  auto an = a.raw();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           for (std::size_t i = 0; i < nd.grad.size(); ++i)
                             ga[i] += nd.grad[i] * 2.0 * an->val[i];
                         });
}

// ---- elementwise transcendentals ----

namespace detail {

template <class F, class DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto an = a.raw();
  return make_op(a.shape(), std::move(out), {a},
                 [an, df](Tensor::Node& nd) {
                   auto& ga = grad_of(an);
                   for (std::size_t i = 0; i < nd.grad.size(); ++i)
                     ga[i] += nd.grad[i] * df(an->val[i], nd.val[i]);
                 });
}

}  // namespace detail

inline Tensor sqrt_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor exp_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor softplus_t(const Tensor& a) {
  // log(1+e^x), computed overflow-safely; derivative is the sigmoid.
  return detail::unary_op(
      a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Tensor erf_t(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::erf(x); },
      [](double x, double) {
        return 2.0 * std::numbers::inv_sqrtpi_v<double> * std::exp(-x * x);
      });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.2) {
  return detail::unary_op(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

// Gradient passes only strictly inside (lo, hi); clamped regions are flat.
inline Tensor clamp_t(const Tensor& a, double lo, double hi) {
  return detail::unary_op(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
  const auto& av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  auto an = a.raw();
  return detail::make_op({1, 1, 1, 1}, {s}, {a},
                         [an](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           const double g = nd.grad[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                         });
}

inline Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.elems()));
}

// ---- channel broadcast (second operand shaped (1, C, 1, 1)) ----

namespace detail {

inline void require_cbias(const Tensor& x, const Tensor& b, const char* op) {
  const Shape& bs = b.shape();
  if (bs.n != 1 || bs.h != 1 || bs.w != 1 || bs.c != x.shape().c)
    throw std::invalid_argument(std::string(op) + ": expected (1," +
                                std::to_string(x.shape().c) + ",1,1), got " +
                                bs.str());
}

}  // namespace detail

inline Tensor cw_add(const Tensor& x, const Tensor& b) {
  detail::require_cbias(x, b, "cw_add");
  const Shape s = x.shape();
  const std::int64_t hw = s.h * s.w;
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<double> out(xv.size());
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const double bc = bv[c];
      const std::int64_t base = (n * s.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) out[base + i] = xv[base + i] + bc;
    }
  auto xn = x.raw(), bn = b.raw();
  return detail::make_op(s, std::move(out), {x, b},
                         [xn, bn, s, hw](Tensor::Node& nd) {
                           auto& gx = detail::grad_of(xn);
                           auto& gb = detail::grad_of(bn);
                           for (std::int64_t n = 0; n < s.n; ++n)
                             for (std::int64_t c = 0; c < s.c; ++c) {
                               const std::int64_t base = (n * s.c + c) * hw;
                               double acc = 0.0;
                               for (std::int64_t i = 0; i < hw; ++i) {
                                 gx[base + i] += nd.grad[base + i];
                                 acc += nd.grad[base + i];
                               }
                               gb[c] += acc;
                             }
                         });
}

inline Tensor cw_mul(const Tensor& x, const Tensor& b) {
  detail::require_cbias(x, b, "cw_mul");
  const Shape s = x.shape();
  const std::int64_t hw = s.h * s.w;
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<double> out(xv.size());
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const double bc = bv[c];
      const std::int64_t base = (n * s.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) out[base + i] = xv[base + i] * bc;
    }
  auto xn = x.raw(), bn = b.raw();
  return detail::make_op(s, std::move(out), {x, b},
                         [xn, bn, s, hw](Tensor::Node& nd) {
                           auto& gx = detail::grad_of(xn);
                           auto& gb = detail::grad_of(bn);
                           for (std::int64_t n = 0; n < s.n; ++n)
                             for (std::int64_t c = 0; c < s.c; ++c) {
                               const double bc = bn->val[c];
                               const std::int64_t base = (n * s.c + c) * hw;
                               double acc = 0.0;
                               for (std::int64_t i = 0; i < hw; ++i) {
                                 gx[base + i] += nd.grad[base + i] * bc;
                                 acc += nd.grad[base + i] * xn->val[base + i];
                               }
                               gb[c] += acc;
                             }
                         });
}

// ---- channel concat / slice ----

inline Tensor concat_c(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw std::invalid_argument("concat_c: incompatible shapes " + sa.str() +
                                " vs " + sb.str());
  Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::int64_t hw = sa.h * sa.w;
  std::vector<double> out(static_cast<std::size_t>(so.elems()));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t n = 0; n < sa.n; ++n) {
    std::memcpy(out.data() + n * so.c * hw, av.data() + n * sa.c * hw,
                sizeof(double) * sa.c * hw);
    std::memcpy(out.data() + (n * so.c + sa.c) * hw, bv.data() + n * sb.c * hw,
                sizeof(double) * sb.c * hw);
  }
  auto an = a.raw(), bn = b.raw();
  return detail::make_op(so, std::move(out), {a, b},
                         [an, bn, sa, sb, so, hw](Tensor::Node& nd) {
                           auto& ga = detail::grad_of(an);
                           auto& gb = detail::grad_of(bn);
                           for (std::int64_t n = 0; n < sa.n; ++n) {
                             const double* g = nd.grad.data() + n * so.c * hw;
                             double* pa = ga.data() + n * sa.c * hw;
                             double* pb = gb.data() + n * sb.c * hw;
                             for (std::int64_t i = 0; i < sa.c * hw; ++i) pa[i] += g[i];
                             for (std::int64_t i = 0; i < sb.c * hw; ++i)
                               pb[i] += g[sa.c * hw + i];
                           }
                         });
}

inline Tensor slice_c(const Tensor& x, std::int64_t c0, std::int64_t c1) {
  const Shape& s = x.shape();
  if (c0 < 0 || c1 <= c0 || c1 > s.c)
    throw std::invalid_argument("slice_c: bad channel range [" +
                                std::to_string(c0) + "," + std::to_string(c1) +
                                ") for " + s.str());
  Shape so{s.n, c1 - c0, s.h, s.w};
  const std::int64_t hw = s.h * s.w;
  std::vector<double> out(static_cast<std::size_t>(so.elems()));
  const auto& xv = x.values();
  for (std::int64_t n = 0; n < s.n; ++n)
    std::memcpy(out.data() + n * so.c * hw, xv.data() + (n * s.c + c0) * hw,
                sizeof(double) * so.c * hw);
  auto xn = x.raw();
  return detail::make_op(so, std::move(out), {x},
                         [xn, s, so, c0, hw](Tensor::Node& nd) {
                           auto& gx = detail::grad_of(xn);
                           for (std::int64_t n = 0; n < s.n; ++n) {
                             const double* g = nd.grad.data() + n * so.c * hw;
                             double* p = gx.data() + (n * s.c + c0) * hw;
                             for (std::int64_t i = 0; i < so.c * hw; ++i) p[i] += g[i];
                           }
                         });
}

// ---- convolution ----

namespace detail {

struct ConvGeom {
  std::int64_t N, Cin, H, W, Cout, kH, kW, OH, OW, groups, cin_g, cout_g;
  int stride, pad;
};

inline ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride, int pad,
                          int groups) {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
  if (groups < 1) throw std::invalid_argument("conv2d: groups must be >= 1");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.c % groups != 0 || ws.n % groups != 0)
    throw std::invalid_argument("conv2d: channels not divisible by groups");
  if (ws.c != xs.c / groups)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ws.c) +
                                " input channels per group, input has " +
                                std::to_string(xs.c / groups));
  ConvGeom g;
  g.N = xs.n; g.Cin = xs.c; g.H = xs.h; g.W = xs.w;
  g.Cout = ws.n; g.kH = ws.h; g.kW = ws.w;
  g.stride = stride; g.pad = pad; g.groups = groups;
  g.cin_g = xs.c / groups; g.cout_g = ws.n / groups;
  g.OH = (g.H + 2 * pad - g.kH) / stride + 1;
  g.OW = (g.W + 2 * pad - g.kW) / stride + 1;
  if (g.H + 2 * pad < g.kH || g.W + 2 * pad < g.kW)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  return g;
}

}  // namespace detail

// Cross-correlation, symmetric zero padding, floor output size.
// kernel: (C_out, C_in/groups, kH, kW); bias: undefined tensor or (1, C_out, 1, 1).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride, int pad, int groups = 1) {
  const auto g = detail::conv_geom(x, w, stride, pad, groups);
  if (bias.defined() && (bias.shape().c != g.Cout || bias.shape().n != 1 ||
                         bias.shape().h != 1 || bias.shape().w != 1))
    throw std::invalid_argument("conv2d: bias shape mismatch");
  Shape so{g.N, g.Cout, g.OH, g.OW};
  std::vector<double> out(static_cast<std::size_t>(so.elems()), 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  const double* bv = bias.defined() ? bias.values().data() : nullptr;

  for (std::int64_t n = 0; n < g.N; ++n)
    for (std::int64_t co = 0; co < g.Cout; ++co) {
      const std::int64_t grp = co / g.cout_g;
      for (std::int64_t oh = 0; oh < g.OH; ++oh) {
        double* orow = out.data() + ((n * g.Cout + co) * g.OH + oh) * g.OW;
        if (bv) for (std::int64_t ow = 0; ow < g.OW; ++ow) orow[ow] = bv[co];
        for (std::int64_t cr = 0; cr < g.cin_g; ++cr) {
          const std::int64_t ci = grp * g.cin_g + cr;
          for (std::int64_t kh = 0; kh < g.kH; ++kh) {
            const std::int64_t ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.H) continue;
            const double* xrow = xv.data() + ((n * g.Cin + ci) * g.H + ih) * g.W;
            const double* wrow = wv.data() + ((co * g.cin_g + cr) * g.kH + kh) * g.kW;
            for (std::int64_t ow = 0; ow < g.OW; ++ow) {
              const std::int64_t iw0 = ow * g.stride - g.pad;
              const std::int64_t k0 = std::max<std::int64_t>(0, -iw0);
              const std::int64_t k1 = std::min(g.kW - 1, g.W - 1 - iw0);
              double acc = 0.0;
              for (std::int64_t kw = k0; kw <= k1; ++kw)
                acc += xrow[iw0 + kw] * wrow[kw];
              orow[ow] += acc;
            }
          }
        }
      }
    }

  auto xn = x.raw(), wn = w.raw();
  auto bn = bias.defined() ? bias.raw() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_op(
      so, std::move(out), std::move(inputs), [xn, wn, bn, g](Tensor::Node& nd) {
        auto& gx = detail::grad_of(xn);
        auto& gw = detail::grad_of(wn);
        const auto& xv = xn->val;
        const auto& wv = wn->val;
        for (std::int64_t n = 0; n < g.N; ++n)
          for (std::int64_t co = 0; co < g.Cout; ++co) {
            const std::int64_t grp = co / g.cout_g;
            for (std::int64_t oh = 0; oh < g.OH; ++oh) {
              const double* grow = nd.grad.data() + ((n * g.Cout + co) * g.OH + oh) * g.OW;
              for (std::int64_t cr = 0; cr < g.cin_g; ++cr) {
                const std::int64_t ci = grp * g.cin_g + cr;
                for (std::int64_t kh = 0; kh < g.kH; ++kh) {
                  const std::int64_t ih = oh * g.stride - g.pad + kh;
                  if (ih < 0 || ih >= g.H) continue;
                  const double* xrow = xv.data() + ((n * g.Cin + ci) * g.H + ih) * g.W;
                  double* gxrow = gx.data() + ((n * g.Cin + ci) * g.H + ih) * g.W;
                  const double* wrow = wv.data() + ((co * g.cin_g + cr) * g.kH + kh) * g.kW;
                  double* gwrow = gw.data() + ((co * g.cin_g + cr) * g.kH + kh) * g.kW;
                  for (std::int64_t ow = 0; ow < g.OW; ++ow) {
                    const std::int64_t iw0 = ow * g.stride - g.pad;
                    const std::int64_t k0 = std::max<std::int64_t>(0, -iw0);
                    const std::int64_t k1 = std::min(g.kW - 1, g.W - 1 - iw0);
                    const double go = grow[ow];
                    for (std::int64_t kw = k0; kw <= k1; ++kw) {
                      gxrow[iw0 + kw] += go * wrow[kw];
                      gwrow[kw] += go * xrow[iw0 + kw];
                    }
                  }
                }
              }
            }
          }
        if (bn) {
          auto& gb = detail::grad_of(bn);
          for (std::int64_t n = 0; n < g.N; ++n)
            for (std::int64_t co = 0; co < g.Cout; ++co) {
              const double* grow = nd.grad.data() + (n * g.Cout + co) * g.OH * g.OW;
              double acc = 0.0;
              for (std::int64_t i = 0; i < g.OH * g.OW; ++i) acc += grow[i];
              gb[co] += acc;
            }
        }
      });
}

// Adjoint of conv2d for matching kernel/stride/padding; output spatial size
// (H-1)*stride - 2*pad + kH + output_padding. kernel: (C_in, C_out, kH, kW).
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias,
                               int stride, int pad, int output_padding = 0) {
  if (stride < 1) throw std::invalid_argument("conv2d_transpose: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d_transpose: negative padding");
  if (output_padding < 0 || output_padding >= stride)
    throw std::invalid_argument("conv2d_transpose: output_padding must be in [0, stride)");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != xs.c)
    throw std::invalid_argument("conv2d_transpose: kernel expects " +
                                std::to_string(ws.n) + " input channels, got " +
                                std::to_string(xs.c));
  const std::int64_t N = xs.n, Cin = xs.c, H = xs.h, W = xs.w;
  const std::int64_t Cout = ws.c, kH = ws.h, kW = ws.w;
  const std::int64_t OH = (H - 1) * stride - 2 * pad + kH + output_padding;
  const std::int64_t OW = (W - 1) * stride - 2 * pad + kW + output_padding;
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("conv2d_transpose: empty output");
  if (bias.defined() && (bias.shape().c != Cout || bias.shape().n != 1 ||
                         bias.shape().h != 1 || bias.shape().w != 1))
    throw std::invalid_argument("conv2d_transpose: bias shape mismatch");

  Shape so{N, Cout, OH, OW};
  std::vector<double> out(static_cast<std::size_t>(so.elems()), 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  if (bias.defined()) {
    const auto& bv = bias.values();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Cout; ++co) {
        double* p = out.data() + (n * Cout + co) * OH * OW;
        for (std::int64_t i = 0; i < OH * OW; ++i) p[i] = bv[co];
      }
  }
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ci = 0; ci < Cin; ++ci)
      for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t ih = 0; ih < H; ++ih)
          for (std::int64_t kh = 0; kh < kH; ++kh) {
            const std::int64_t oh = ih * stride - pad + kh;
            if (oh < 0 || oh >= OH) continue;
            const double* xrow = xv.data() + ((n * Cin + ci) * H + ih) * W;
            const double* wrow = wv.data() + ((ci * Cout + co) * kH + kh) * kW;
            double* orow = out.data() + ((n * Cout + co) * OH + oh) * OW;
            for (std::int64_t iw = 0; iw < W; ++iw) {
              const std::int64_t ow0 = iw * stride - pad;
              const std::int64_t k0 = std::max<std::int64_t>(0, -ow0);
              const std::int64_t k1 = std::min(kW - 1, OW - 1 - ow0);
              const double v = xrow[iw];
              for (std::int64_t kw = k0; kw <= k1; ++kw)
                orow[ow0 + kw] += v * wrow[kw];
            }
          }

  auto xn = x.raw(), wn = w.raw();
  auto bn = bias.defined() ? bias.raw() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const int s = stride, p = pad;
  return detail::make_op(
      so, std::move(out), std::move(inputs),
      [xn, wn, bn, N, Cin, Cout, H, W, kH, kW, OH, OW, s, p](Tensor::Node& nd) {
        auto& gx = detail::grad_of(xn);
        auto& gw = detail::grad_of(wn);
        const auto& xv = xn->val;
        const auto& wv = wn->val;
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            for (std::int64_t co = 0; co < Cout; ++co)
              for (std::int64_t ih = 0; ih < H; ++ih)
                for (std::int64_t kh = 0; kh < kH; ++kh) {
                  const std::int64_t oh = ih * s - p + kh;
                  if (oh < 0 || oh >= OH) continue;
                  const double* grow = nd.grad.data() + ((n * Cout + co) * OH + oh) * OW;
                  const double* xrow = xv.data() + ((n * Cin + ci) * H + ih) * W;
                  double* gxrow = gx.data() + ((n * Cin + ci) * H + ih) * W;
                  const double* wrow = wv.data() + ((ci * Cout + co) * kH + kh) * kW;
                  double* gwrow = gw.data() + ((ci * Cout + co) * kH + kh) * kW;
                  for (std::int64_t iw = 0; iw < W; ++iw) {
                    const std::int64_t ow0 = iw * s - p;
                    const std::int64_t k0 = std::max<std::int64_t>(0, -ow0);
                    const std::int64_t k1 = std::min(kW - 1, OW - 1 - ow0);
                    double acc = 0.0;
                    for (std::int64_t kw = k0; kw <= k1; ++kw) {
                      acc += grow[ow0 + kw] * wrow[kw];
                      gwrow[kw] += grow[ow0 + kw] * xrow[iw];
                    }
                    gxrow[iw] += acc;
                  }
                }
        if (bn) {
          auto& gb = detail::grad_of(bn);
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const double* grow = nd.grad.data() + (n * Cout + co) * OH * OW;
              double acc = 0.0;
              for (std::int64_t i = 0; i < OH * OW; ++i) acc += grow[i];
              gb[co] += acc;
            }
        }
      });
}

// ---- deterministic RNG ----

// std:: distributions are implementation-defined; these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}

  std::uint64_t next_u64() { return g_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(g_() >> 11) * 0x1.0p-53;
  }

  double uniform_range(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {  // Box-Muller with a cached spare
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi_v<double> * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 g_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor randn(Shape s, Rng& rng, double stddev = 1.0, bool is_param = true) {
  std::vector<double> v(static_cast<std::size_t>(s.elems()));
  for (auto& x : v) x = rng.normal() * stddev;
  return is_param ? Tensor::param(s, std::move(v)) : Tensor::from(s, std::move(v));
}

// ---- Adam ----

struct AdamState {
  std::vector<std::vector<double>> first_moment, second_moment;
  std::int64_t step = 0;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    state_.first_moment.resize(params_.size());
    state_.second_moment.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      state_.first_moment[i].assign(params_[i].values().size(), 0.0);
      state_.second_moment[i].assign(params_[i].values().size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      auto& g = p.grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
  }

  // Bias-corrected update; a non-finite gradient anywhere rejects the whole
  // call before any state is touched.
  void step() {
    for (auto& p : params_) {
      for (double g : p.grad())
        if (!std::isfinite(g))
          throw std::runtime_error("adam_step: non-finite gradient, update rejected");
    }
    state_.step += 1;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& v = params_[i].values();
      auto& g = params_[i].grad();
      auto& m1 = state_.first_moment[i];
      auto& m2 = state_.second_moment[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        m1[j] = b1_ * m1[j] + (1.0 - b1_) * g[j];
        m2[j] = b2_ * m2[j] + (1.0 - b2_) * g[j] * g[j];
        v[j] -= lr_ * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + eps_);
      }
    }
  }

  const AdamState& state() const { return state_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  double lr_, b1_, b2_, eps_;
  AdamState state_;
};

// ---- checkpoint persistence ----
// Flat binary: magic "OCWT", u32 record count, then records of
// {u16 name length, UTF-8 name, 4 x u32 shape, little-endian f64 payload}.

namespace detail {

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& s, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  std::uint64_t take(int bytes) {
    if (pos_ + bytes > n_) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += bytes;
    return v;
  }
  std::string take_str(std::size_t len) {
    if (pos_ + len > n_) throw std::runtime_error("checkpoint: truncated file");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  bool exhausted() const { return pos_ == n_; }

 private:
  const unsigned char* p_;
  std::size_t n_, pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, Tensor>& records) {
  std::string buf = "OCWT";
  detail::put_u32(buf, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {  // std::map: deterministic name order
    if (name.size() > 0xFFFF)
      throw std::invalid_argument("checkpoint: record name too long");
    detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    const Shape& s = t.shape();
    detail::put_u32(buf, static_cast<std::uint32_t>(s.n));
    detail::put_u32(buf, static_cast<std::uint32_t>(s.c));
    detail::put_u32(buf, static_cast<std::uint32_t>(s.h));
    detail::put_u32(buf, static_cast<std::uint32_t>(s.w));
    for (double d : t.values()) detail::put_f64(buf, d);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(reinterpret_cast<const unsigned char*>(data.data()), data.size());
  if (r.take_str(4) != "OCWT") throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t count = static_cast<std::uint32_t>(r.take(4));
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = static_cast<std::size_t>(r.take(2));
    std::string name = r.take_str(nlen);
    Shape s;
    s.n = static_cast<std::int64_t>(r.take(4));
    s.c = static_cast<std::int64_t>(r.take(4));
    s.h = static_cast<std::int64_t>(r.take(4));
    s.w = static_cast<std::int64_t>(r.take(4));
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw std::runtime_error("checkpoint: invalid shape in record " + name);
    std::vector<double> v(static_cast<std::size_t>(s.elems()));
    for (auto& d : v) {
      std::uint64_t bits = r.take(8);
      std::memcpy(&d, &bits, 8);
    }
    if (!out.emplace(name, Tensor::from(s, std::move(v))).second)
      throw std::runtime_error("checkpoint: duplicate record " + name);
  }
  if (!r.exhausted()) throw std::runtime_error("checkpoint: trailing bytes");
  return out;
}

}  // namespace ocmc
