// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ocmc/tensor.hpp"

namespace ocmc {

// Building blocks: divisive normalization, the dual-resolution feature pair,
// and the octave convolution layers that mix the two resolutions.

enum class Act { linear, gdn, igdn, leaky };

struct GdnParams {
  Tensor beta;   // (1,C,1,1); kept >= 1e-6 by reprojection
  Tensor gamma;  // (C,C,1,1); kept >= 0 by reprojection

  static GdnParams init(std::int64_t c) {
    GdnParams p;
    p.beta = Tensor::param({1, c, 1, 1},
                           std::vector<double>(static_cast<std::size_t>(c), 1.0));
    std::vector<double> g(static_cast<std::size_t>(c * c), 0.0);
    for (std::int64_t i = 0; i < c; ++i) g[i * c + i] = 0.1;
    p.gamma = Tensor::param({c, c, 1, 1}, std::move(g));
    return p;
  }

  void reproject() {
    for (auto& v : beta.values()) v = std::max(v, 1e-6);
    for (auto& v : gamma.values()) v = std::max(v, 0.0);
  }

  void collect(const std::string& prefix, std::map<std::string, Tensor>& out) const {
    out.emplace(prefix + ".beta", beta);
    out.emplace(prefix + ".gamma", gamma);
  }
  void trainables(std::vector<Tensor>& out) const {
    out.push_back(beta);
    out.push_back(gamma);
  }
};

// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), per spatial location.
inline Tensor gdn(const Tensor& x, const GdnParams& p) {
  Tensor denom_sq = conv2d(square(x), p.gamma, p.beta, 1, 0);
  return div(x, sqrt_t(denom_sq));
}

// y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2).
inline Tensor igdn(const Tensor& x, const GdnParams& p) {
  Tensor denom_sq = conv2d(square(x), p.gamma, p.beta, 1, 0);
  return mul(x, sqrt_t(denom_sq));
}

struct DualRes {
  Tensor high, low;
};

inline void check_dualres(const DualRes& d, const char* where) {
  const Shape& h = d.high.shape();
  const Shape& l = d.low.shape();
  if (h.n != l.n)
    throw std::invalid_argument(std::string(where) + ": batch mismatch");
  if (h.h % 2 != 0 || h.w % 2 != 0 || l.h * 2 != h.h || l.w * 2 != h.w)
    throw std::invalid_argument(std::string(where) +
                                ": low dims must be exactly half of even high dims, got " +
                                h.str() + " / " + l.str());
}

// Kernel pack shared by GoConv and GoTConv. Intra kernels follow the layout
// of their op (conv: (Cout,Cin,k,k), tconv: (Cin,Cout,k,k)); the cross kernels
// are w_hl (Cl,Ch,k,k) and w_lh (Cl,Ch,k,k) in their op's layout. Branch
// biases are added once, after the cross-path merge; the convs run bias-free.
struct GoConvWeights {
  Tensor w_hh, w_ll, w_hl, w_lh;
  Tensor bias_h, bias_l;

  void collect(const std::string& p, std::map<std::string, Tensor>& out) const {
    out.emplace(p + ".w_hh", w_hh);
    out.emplace(p + ".w_ll", w_ll);
    out.emplace(p + ".w_hl", w_hl);
    out.emplace(p + ".w_lh", w_lh);
    out.emplace(p + ".bias_h", bias_h);
    out.emplace(p + ".bias_l", bias_l);
  }
  void trainables(std::vector<Tensor>& out) const {
    out.push_back(w_hh);
    out.push_back(w_ll);
    out.push_back(w_hl);
    out.push_back(w_lh);
    out.push_back(bias_h);
    out.push_back(bias_l);
  }
};

namespace detail {

inline Tensor conv_weight(std::int64_t cout, std::int64_t cin, int k, Rng& rng) {
  const double std = std::sqrt(1.0 / static_cast<double>(cin * k * k));
  return randn({cout, cin, k, k}, rng, std);
}

inline Tensor zero_bias(std::int64_t c) {
  return Tensor::param({1, c, 1, 1}, std::vector<double>(static_cast<std::size_t>(c), 0.0));
}

}  // namespace detail

struct GoConvLayer {
  GoConvWeights w;
  int stride = 1;  // 1 or 2
  Act act = Act::linear;
  GdnParams gdn_h, gdn_l;  // used when act is gdn/igdn
  double leaky_slope = 0.2;

  Tensor apply_act(const Tensor& x, bool high_branch) const {
    switch (act) {
      case Act::linear: return x;
      case Act::leaky: return leaky_relu(x, leaky_slope);
      case Act::gdn: return gdn(x, high_branch ? gdn_h : gdn_l);
      case Act::igdn: return igdn(x, high_branch ? gdn_h : gdn_l);
    }
    throw std::invalid_argument("unknown activation");
  }

  // out.high = Act(conv_s(in.high) + up(in.low) + bias_h)
  // out.low  = Act(conv_s(in.low) + down(in.high) + bias_l)
  // The cross resamplers are single convs: down at stride 2s, up transposed
  // landing on the destination resolution (stride 2 when s=1, stride 1 when s=2).
  DualRes forward(const DualRes& in) const {
    check_dualres(in, "goconv");
    if (stride != 1 && stride != 2)
      throw std::invalid_argument("goconv: stride must be 1 or 2");
    if (stride == 2 && (in.high.shape().h % 4 != 0 || in.high.shape().w % 4 != 0))
      throw std::invalid_argument(
          "goconv: stride-2 needs high dims divisible by 4 to keep the "
          "half-resolution pair, got " + in.high.shape().str());
    Tensor high_i = conv2d(in.high, w.w_hh, Tensor(), stride, 1);
    Tensor low_i = conv2d(in.low, w.w_ll, Tensor(), stride, 1);
    Tensor down = conv2d(in.high, w.w_hl, Tensor(), 2 * stride, 1);
    Tensor up = (stride == 1)
                    ? conv2d_transpose(in.low, w.w_lh, Tensor(), 2, 1, 1)
                    : conv2d_transpose(in.low, w.w_lh, Tensor(), 1, 1, 0);
    DualRes out;
    out.high = apply_act(cw_add(add(high_i, up), w.bias_h), true);
    out.low = apply_act(cw_add(add(low_i, down), w.bias_l), false);
    return out;
  }

  void collect(const std::string& p, std::map<std::string, Tensor>& out) const {
    w.collect(p, out);
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.collect(p + ".gdn_h", out);
      gdn_l.collect(p + ".gdn_l", out);
    }
  }
  void trainables(std::vector<Tensor>& out) const {
    w.trainables(out);
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.trainables(out);
      gdn_l.trainables(out);
    }
  }
  void reproject() {
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.reproject();
      gdn_l.reproject();
    }
  }
};

struct GoTConvLayer {
  GoConvWeights w;
  int stride = 1;
  Act act = Act::linear;
  GdnParams gdn_h, gdn_l;
  double leaky_slope = 0.2;

  Tensor apply_act(const Tensor& x, bool high_branch) const {
    switch (act) {
      case Act::linear: return x;
      case Act::leaky: return leaky_relu(x, leaky_slope);
      case Act::gdn: return gdn(x, high_branch ? gdn_h : gdn_l);
      case Act::igdn: return igdn(x, high_branch ? gdn_h : gdn_l);
    }
    throw std::invalid_argument("unknown activation");
  }

  // Mirror of GoConv: transposed convs on the intra paths and the LR->HR
  // cross path, a plain conv on HR->LR. Output dims are stride x input dims.
  DualRes forward(const DualRes& in) const {
    check_dualres(in, "gotconv");
    if (stride != 1 && stride != 2)
      throw std::invalid_argument("gotconv: stride must be 1 or 2");
    Tensor high_i = conv2d_transpose(in.high, w.w_hh, Tensor(), stride, 1, stride - 1);
    Tensor low_i = conv2d_transpose(in.low, w.w_ll, Tensor(), stride, 1, stride - 1);
    Tensor up = conv2d_transpose(in.low, w.w_lh, Tensor(), 2 * stride, 1, 2 * stride - 1);
    Tensor down = (stride == 1) ? conv2d(in.high, w.w_hl, Tensor(), 2, 1)
                                : conv2d(in.high, w.w_hl, Tensor(), 1, 1);
    DualRes out;
    out.high = apply_act(cw_add(add(high_i, up), w.bias_h), true);
    out.low = apply_act(cw_add(add(low_i, down), w.bias_l), false);
    return out;
  }

  void collect(const std::string& p, std::map<std::string, Tensor>& out) const {
    w.collect(p, out);
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.collect(p + ".gdn_h", out);
      gdn_l.collect(p + ".gdn_l", out);
    }
  }
  void trainables(std::vector<Tensor>& out) const {
    w.trainables(out);
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.trainables(out);
      gdn_l.trainables(out);
    }
  }
  void reproject() {
    if (act == Act::gdn || act == Act::igdn) {
      gdn_h.reproject();
      gdn_l.reproject();
    }
  }
};

inline GoConvLayer make_goconv(std::int64_t cin_h, std::int64_t cin_l,
                               std::int64_t cout_h, std::int64_t cout_l,
                               int stride, Act act, Rng& rng) {
  GoConvLayer l;
  l.stride = stride;
  l.act = act;
  l.w.w_hh = detail::conv_weight(cout_h, cin_h, 3, rng);
  l.w.w_ll = detail::conv_weight(cout_l, cin_l, 3, rng);
  l.w.w_hl = detail::conv_weight(cout_l, cin_h, 3, rng);
  l.w.w_lh = detail::conv_weight(cin_l, cout_h, 3, rng);  // tconv layout
  l.w.bias_h = detail::zero_bias(cout_h);
  l.w.bias_l = detail::zero_bias(cout_l);
  if (act == Act::gdn || act == Act::igdn) {
    l.gdn_h = GdnParams::init(cout_h);
    l.gdn_l = GdnParams::init(cout_l);
  }
  return l;
}

inline GoTConvLayer make_gotconv(std::int64_t cin_h, std::int64_t cin_l,
                                 std::int64_t cout_h, std::int64_t cout_l,
                                 int stride, Act act, Rng& rng) {
  GoTConvLayer l;
  l.stride = stride;
  l.act = act;
  l.w.w_hh = detail::conv_weight(cin_h, cout_h, 3, rng);  // tconv layout
  l.w.w_ll = detail::conv_weight(cin_l, cout_l, 3, rng);
  l.w.w_lh = detail::conv_weight(cin_l, cout_h, 3, rng);
  l.w.w_hl = detail::conv_weight(cout_l, cin_h, 3, rng);
  l.w.bias_h = detail::zero_bias(cout_h);
  l.w.bias_l = detail::zero_bias(cout_l);
  if (act == Act::gdn || act == Act::igdn) {
    l.gdn_h = GdnParams::init(cout_h);
    l.gdn_l = GdnParams::init(cout_l);
  }
  return l;
}

// The adjoint of a bias-free, identity-activation GoConv with the same kernel
// buffers: cross kernels swap roles, each op becomes its transpose.
inline GoTConvLayer gotconv_adjoint(const GoConvLayer& g) {
  GoTConvLayer t;
  t.stride = g.stride;
  t.act = Act::linear;
  t.w.w_hh = g.w.w_hh;
  t.w.w_ll = g.w.w_ll;
  t.w.w_lh = g.w.w_hl;
  t.w.w_hl = g.w.w_lh;
  const Shape& hs = g.w.w_hh.shape();  // (Cout_h, Cin_h, k, k)
  const Shape& ls = g.w.w_ll.shape();
  t.w.bias_h = detail::zero_bias(hs.c);
  t.w.bias_l = detail::zero_bias(ls.c);
  return t;
}

// First module: a single-resolution image enters, the dual-resolution pair
// leaves (conv s2 for HR, one composed conv s4 for LR).
struct GoConvStem {
  Tensor w_h, w_l, bias_h, bias_l;
  Act act = Act::gdn;
  GdnParams gdn_h, gdn_l;
  double leaky_slope = 0.2;

  DualRes forward(const Tensor& img) const {
    const Shape& s = img.shape();
    if (s.h % 4 != 0 || s.w % 4 != 0)
      throw std::invalid_argument("stem: image dims must be divisible by 4, got " + s.str());
    Tensor hi = cw_add(conv2d(img, w_h, Tensor(), 2, 1), bias_h);
    Tensor lo = cw_add(conv2d(img, w_l, Tensor(), 4, 1), bias_l);
    DualRes out;
    if (act == Act::gdn) {
      out.high = gdn(hi, gdn_h);
      out.low = gdn(lo, gdn_l);
    } else if (act == Act::leaky) {
      out.high = leaky_relu(hi, leaky_slope);
      out.low = leaky_relu(lo, leaky_slope);
    } else {
      out.high = hi;
      out.low = lo;
    }
    return out;
  }

  void collect(const std::string& p, std::map<std::string, Tensor>& out) const {
    out.emplace(p + ".w_h", w_h);
    out.emplace(p + ".w_l", w_l);
    out.emplace(p + ".bias_h", bias_h);
    out.emplace(p + ".bias_l", bias_l);
    if (act == Act::gdn) {
      gdn_h.collect(p + ".gdn_h", out);
      gdn_l.collect(p + ".gdn_l", out);
    }
  }
  void trainables(std::vector<Tensor>& out) const {
    out.push_back(w_h);
    out.push_back(w_l);
    out.push_back(bias_h);
    out.push_back(bias_l);
    if (act == Act::gdn) {
      gdn_h.trainables(out);
      gdn_l.trainables(out);
    }
  }
  void reproject() {
    if (act == Act::gdn) {
      gdn_h.reproject();
      gdn_l.reproject();
    }
  }
};

inline GoConvStem make_stem(std::int64_t cout_h, std::int64_t cout_l, Act act, Rng& rng) {
  GoConvStem s;
  s.act = act;
  s.w_h = detail::conv_weight(cout_h, 3, 3, rng);
  s.w_l = detail::conv_weight(cout_l, 3, 3, rng);
  s.bias_h = detail::zero_bias(cout_h);
  s.bias_l = detail::zero_bias(cout_l);
  if (act == Act::gdn) {
    s.gdn_h = GdnParams::init(cout_h);
    s.gdn_l = GdnParams::init(cout_l);
  }
  return s;
}

// Last module: the dual-resolution pair merges into a 3-channel image
// (tconv s2 + tconv s4, summed); linear, clamped to [-1,1] at eval only.
struct GoTConvHead {
  Tensor w_h, w_l, bias;

  Tensor forward(const DualRes& in, bool clamp_output) const {
    check_dualres(in, "head");
    Tensor hi = conv2d_transpose(in.high, w_h, Tensor(), 2, 1, 1);
    Tensor lo = conv2d_transpose(in.low, w_l, Tensor(), 4, 1, 3);
    Tensor out = cw_add(add(hi, lo), bias);
    return clamp_output ? clamp_t(out, -1.0, 1.0) : out;
  }

  void collect(const std::string& p, std::map<std::string, Tensor>& out) const {
    out.emplace(p + ".w_h", w_h);
    out.emplace(p + ".w_l", w_l);
    out.emplace(p + ".bias", bias);
  }
  void trainables(std::vector<Tensor>& out) const {
    out.push_back(w_h);
    out.push_back(w_l);
    out.push_back(bias);
  }
};

inline GoTConvHead make_head(std::int64_t cin_h, std::int64_t cin_l, Rng& rng) {
  GoTConvHead h;
  h.w_h = detail::conv_weight(cin_h, 3, 3, rng);  // tconv layout
  h.w_l = detail::conv_weight(cin_l, 3, 3, rng);
  h.bias = detail::zero_bias(3);
  return h;
}

}  // namespace ocmc
