// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// The full codec network: dual-resolution core autoencoder, two hyper
// layers, cross-resolution parameter estimation modules, and quantization.
// Entropy parameters for each coded stream depend only on streams decoded
// earlier (z -> y1.low -> y1.high -> y.low -> y.high), so the decoder can
// reproduce them bit-exactly without any spatial context model.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocmc/entropy.hpp"
#include "ocmc/layers.hpp"
#include "ocmc/tensor.hpp"

namespace ocmc {

enum class HyperScheme : int { scheme1 = 1, scheme2 = 2 };
enum class Metric : int { mse = 0, msssim = 1 };
enum class RunMode { train, eval };

struct ModelConfig {
  std::int64_t n = 32;  // total filters; each branch carries n/2
  double lambda = 0.01;
  HyperScheme hyper_scheme = HyperScheme::scheme1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  Metric metric = Metric::mse;
  double leaky_slope = 0.2;

  std::int64_t half() const { return n / 2; }
  // Images are replicate-padded to a multiple of this before analysis.
  std::int64_t pad_factor() const {
    return hyper_scheme == HyperScheme::scheme1 ? 256 : 128;
  }
  void validate() const {
    if (n < 2 || n % 2 != 0)
      throw std::invalid_argument("ModelConfig: filter count must be even and >= 2");
    if (!(lambda > 0)) throw std::invalid_argument("ModelConfig: lambda must be > 0");
    if (lambda1 < 0 || lambda2 < 0)
      throw std::invalid_argument("ModelConfig: fidelity weights must be >= 0");
  }
};

struct GaussianParams {
  Tensor mu;
  Tensor sigma;
};

// Noise proxy during training, round half away from zero at eval.
inline Tensor quantize(const Tensor& x, RunMode mode, Rng* rng = nullptr) {
  if (mode == RunMode::train) {
    if (rng == nullptr) throw std::invalid_argument("quantize: train mode needs an rng");
    Tensor noise = Tensor::zeros(x.shape());
    for (auto& v : noise.values()) v = rng->uniform_range(-0.5, 0.5);
    return add(x, noise);
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out.values()[i] = std::round(xv[i]);
  return out;
}

inline DualRes quantize(const DualRes& x, RunMode mode, Rng* rng = nullptr) {
  return {quantize(x.high, mode, rng), quantize(x.low, mode, rng)};
}

// Estimates (mu, sigma) for a target latent from a same-resolution feature
// map plus an already-decoded lower-resolution latent, upsampled through
// learned stride-2 transposed convolutions until the resolutions meet.
struct CrpeModule {
  int steps = 1;
  std::int64_t half_channels = 0;
  double slope = 0.2;
  std::vector<Tensor> up_w, up_b;
  Tensor fuse1_w, fuse1_b;
  Tensor fuse2_w, fuse2_b;

  static CrpeModule init(int steps, std::int64_t feature_c, std::int64_t latent_c,
                         double slope, Rng& rng) {
    CrpeModule m;
    m.steps = steps;
    m.half_channels = latent_c;
    m.slope = slope;
    for (int i = 0; i < steps; ++i) {
      m.up_w.push_back(detail::conv_weight(latent_c, latent_c, 3, rng));
      m.up_b.push_back(detail::zero_bias(latent_c));
    }
    const std::int64_t fused = feature_c + latent_c;
    const std::int64_t out_c = 2 * latent_c;
    m.fuse1_w = detail::conv_weight(out_c, fused, 3, rng);
    m.fuse1_b = detail::zero_bias(out_c);
    m.fuse2_w = detail::conv_weight(out_c, out_c, 3, rng);
    m.fuse2_b = detail::zero_bias(out_c);
    return m;
  }

  GaussianParams forward(const Tensor& feature, const Tensor& decoded) const {
    const Shape& fs = feature.shape();
    const Shape& ds = decoded.shape();
    if (fs.h != (ds.h << steps) || fs.w != (ds.w << steps))
      throw std::invalid_argument(
          "CrpeModule: resolution ratio must be 2^" + std::to_string(steps) +
          " (got " + fs.str() + " vs " + ds.str() + ")");
    Tensor u = decoded;
    for (int i = 0; i < steps; ++i)
      u = leaky_relu(conv2d_transpose(u, up_w[static_cast<std::size_t>(i)],
                                      up_b[static_cast<std::size_t>(i)], 2, 1, 1),
                     slope);
    Tensor fused = concat_c(feature, u);
    Tensor a = leaky_relu(conv2d(fused, fuse1_w, fuse1_b, 1, 1), slope);
    Tensor b = conv2d(a, fuse2_w, fuse2_b, 1, 1);
    GaussianParams p;
    p.mu = slice_c(b, 0, half_channels);
    p.sigma = exp_t(clamp_t(slice_c(b, half_channels, 2 * half_channels), -10.0, 10.0));
    return p;
  }

  void collect(const std::string& prefix, std::map<std::string, Tensor>& out) const {
    for (std::size_t i = 0; i < up_w.size(); ++i) {
      out.emplace(prefix + ".up" + std::to_string(i) + ".w", up_w[i]);
      out.emplace(prefix + ".up" + std::to_string(i) + ".b", up_b[i]);
    }
    out.emplace(prefix + ".fuse1.w", fuse1_w);
    out.emplace(prefix + ".fuse1.b", fuse1_b);
    out.emplace(prefix + ".fuse2.w", fuse2_w);
    out.emplace(prefix + ".fuse2.b", fuse2_b);
  }
  void trainables(std::vector<Tensor>& out) const {
    for (const Tensor& t : up_w) out.push_back(t);
    for (const Tensor& t : up_b) out.push_back(t);
    out.push_back(fuse1_w);
    out.push_back(fuse1_b);
    out.push_back(fuse2_w);
    out.push_back(fuse2_b);
  }
};

// Two bias-free 3x3 convolutions used by the information-fidelity loss;
// each maps a low-resolution latent to a same-shaped prediction.
struct FidelityProbe {
  Tensor theta;  // acts on y.low
  Tensor omega;  // acts on y1.low

  static FidelityProbe init(std::int64_t channels, Rng& rng) {
    FidelityProbe p;
    p.theta = detail::conv_weight(channels, channels, 3, rng);
    p.omega = detail::conv_weight(channels, channels, 3, rng);
    return p;
  }
  Tensor apply_theta(const Tensor& y_low) const { return conv2d(y_low, theta, Tensor{}, 1, 1); }
  Tensor apply_omega(const Tensor& y1_low) const { return conv2d(y1_low, omega, Tensor{}, 1, 1); }
  void collect(const std::string& prefix, std::map<std::string, Tensor>& out) const {
    out.emplace(prefix + ".theta", theta);
    out.emplace(prefix + ".omega", omega);
  }
  void trainables(std::vector<Tensor>& out) const {
    out.push_back(theta);
    out.push_back(omega);
  }
};

struct LatentBundle {
  DualRes y, y1, z;        // pre-quantization
  DualRes y_q, y1_q, z_q;  // quantized (noisy in train mode)
  DualRes phi, psi;        // hyper feature maps
  GaussianParams params_y1H, params_y1L, params_yH, params_yL;
};

class CodecNet {
 public:
  ModelConfig cfg;
  int trained_stage = 0;  // highest completed training stage, kept in checkpoints

  GoConvStem ge_stem;
  GoConvLayer ge1, ge2, ge3;
  GoTConvLayer gd1, gd2, gd3;
  GoTConvHead gd_head;
  GoConvLayer he1, he2, he3;
  GoTConvLayer hd1, hd2, hd3;
  GoConvLayer fe1, fe2, fe3;
  GoTConvLayer fd1, fd2, fd3;
  CrpeModule e1, e2, e3;
  FidelityProbe probe;
  FactorizedModel fm_zh, fm_zl;    // codes the z branches
  FactorizedModel fm_y1h, fm_y1l;  // interim y1 models for stage-2 training

  static CodecNet init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CodecNet net;
    net.cfg = cfg;
    Rng rng(seed);
    const std::int64_t h = cfg.half();
    const double sl = cfg.leaky_slope;
    const bool s1 = cfg.hyper_scheme == HyperScheme::scheme1;

    net.ge_stem = make_stem(h, h, Act::gdn, rng);
    net.ge1 = make_goconv(h, h, h, h, 2, Act::gdn, rng);
    net.ge2 = make_goconv(h, h, h, h, 2, Act::gdn, rng);
    net.ge3 = make_goconv(h, h, h, h, 2, Act::linear, rng);

    net.gd1 = make_gotconv(h, h, h, h, 2, Act::igdn, rng);
    net.gd2 = make_gotconv(h, h, h, h, 2, Act::igdn, rng);
    net.gd3 = make_gotconv(h, h, h, h, 2, Act::igdn, rng);
    net.gd_head = make_head(h, h, rng);

    net.he1 = make_goconv(h, h, h, h, 1, Act::leaky, rng);
    net.he2 = make_goconv(h, h, h, h, 2, Act::leaky, rng);
    net.he3 = make_goconv(h, h, h, h, 2, Act::linear, rng);

    net.hd1 = make_gotconv(h, h, h, h, 2, Act::leaky, rng);
    net.hd2 = make_gotconv(h, h, h, h, 2, Act::leaky, rng);
    net.hd3 = make_gotconv(h, h, cfg.n, cfg.n, 1, Act::linear, rng);

    net.fe1 = make_goconv(h, h, h, h, s1 ? 2 : 1, Act::leaky, rng);
    net.fe2 = make_goconv(h, h, h, h, 1, Act::leaky, rng);
    net.fe3 = make_goconv(h, h, h, h, 1, Act::linear, rng);

    net.fd1 = make_gotconv(h, h, h, h, 1, Act::leaky, rng);
    net.fd2 = make_gotconv(h, h, h, h, 1, Act::leaky, rng);
    net.fd3 = make_gotconv(h, h, cfg.n, cfg.n, s1 ? 2 : 1, Act::linear, rng);

    net.e1 = CrpeModule::init(1, cfg.n, h, sl, rng);
    net.e2 = CrpeModule::init(2, cfg.n, h, sl, rng);
    net.e3 = CrpeModule::init(1, cfg.n, h, sl, rng);

    net.probe = FidelityProbe::init(h, rng);
    net.fm_zh = FactorizedModel::init(h, rng);
    net.fm_zl = FactorizedModel::init(h, rng);
    net.fm_y1h = FactorizedModel::init(h, rng);
    net.fm_y1l = FactorizedModel::init(h, rng);
    return net;
  }

  // ---- network stages ------------------------------------------------

  DualRes analysis(const Tensor& x) const {
    if (x.shape().c != 3) throw std::invalid_argument("analysis: expected a 3-channel image");
    DualRes y = ge_stem.forward(x);
    y = ge1.forward(y);
    y = ge2.forward(y);
    return ge3.forward(y);
  }

  Tensor synthesis(const DualRes& y_q, RunMode mode) const {
    DualRes u = gd1.forward(y_q);
    u = gd2.forward(u);
    u = gd3.forward(u);
    return gd_head.forward(u, mode == RunMode::eval);
  }

  DualRes hyper_analysis_1(const DualRes& y_q) const {
    DualRes u = he1.forward(y_q);
    u = he2.forward(u);
    return he3.forward(u);
  }

  DualRes hyper_synthesis_1(const DualRes& y1_q) const {
    DualRes u = hd1.forward(y1_q);
    u = hd2.forward(u);
    return hd3.forward(u);
  }

  DualRes hyper_analysis_2(const DualRes& y1_q) const {
    DualRes u = fe1.forward(y1_q);
    u = fe2.forward(u);
    return fe3.forward(u);
  }

  DualRes hyper_synthesis_2(const DualRes& z_q) const {
    DualRes u = fd1.forward(z_q);
    u = fd2.forward(u);
    return fd3.forward(u);
  }

  GaussianParams crpe_e1(const Tensor& phi_h, const Tensor& y1l_q) const {
    return e1.forward(phi_h, y1l_q);
  }
  GaussianParams crpe_e2(const Tensor& psi_l, const Tensor& y1l_q) const {
    return e2.forward(psi_l, y1l_q);
  }
  GaussianParams crpe_e3(const Tensor& psi_h, const Tensor& yl_q) const {
    return e3.forward(psi_h, yl_q);
  }

  // Splits the low hyper feature map into entropy parameters for y1.low.
  GaussianParams y1l_params_from_phi(const Tensor& phi_low) const {
    const std::int64_t h = cfg.half();
    if (phi_low.shape().c != 2 * h)
      throw std::invalid_argument("y1l_params_from_phi: feature width mismatch");
    GaussianParams p;
    p.mu = slice_c(phi_low, 0, h);
    p.sigma = exp_t(clamp_t(slice_c(phi_low, h, 2 * h), -10.0, 10.0));
    return p;
  }

  // Full encode-side pass in decode-causal order. rng is only used for
  // train-mode quantization noise.
  std::pair<Tensor, LatentBundle> forward_full(const Tensor& x, RunMode mode,
                                               Rng* rng = nullptr) const {
    LatentBundle lb;
    lb.y = analysis(x);
    lb.y_q = quantize(lb.y, mode, rng);
    lb.y1 = hyper_analysis_1(lb.y_q);
    lb.y1_q = quantize(lb.y1, mode, rng);
    lb.z = hyper_analysis_2(lb.y1_q);
    lb.z_q = quantize(lb.z, mode, rng);

    lb.phi = hyper_synthesis_2(lb.z_q);
    lb.params_y1L = y1l_params_from_phi(lb.phi.low);
    lb.params_y1H = crpe_e1(lb.phi.high, lb.y1_q.low);
    lb.psi = hyper_synthesis_1(lb.y1_q);
    lb.params_yL = crpe_e2(lb.psi.low, lb.y1_q.low);
    lb.params_yH = crpe_e3(lb.psi.high, lb.y_q.low);

    Tensor x_hat = synthesis(lb.y_q, mode);
    return {x_hat, std::move(lb)};
  }

  // ---- parameter management -------------------------------------------

  std::map<std::string, Tensor> collect() const {
    std::map<std::string, Tensor> m;
    ge_stem.collect("ge.stem", m);
    ge1.collect("ge.l1", m);
    ge2.collect("ge.l2", m);
    ge3.collect("ge.l3", m);
    gd1.collect("gd.l1", m);
    gd2.collect("gd.l2", m);
    gd3.collect("gd.l3", m);
    gd_head.collect("gd.head", m);
    he1.collect("he.l1", m);
    he2.collect("he.l2", m);
    he3.collect("he.l3", m);
    hd1.collect("hd.l1", m);
    hd2.collect("hd.l2", m);
    hd3.collect("hd.l3", m);
    fe1.collect("fe.l1", m);
    fe2.collect("fe.l2", m);
    fe3.collect("fe.l3", m);
    fd1.collect("fd.l1", m);
    fd2.collect("fd.l2", m);
    fd3.collect("fd.l3", m);
    e1.collect("e1", m);
    e2.collect("e2", m);
    e3.collect("e3", m);
    probe.collect("probe", m);
    fm_zh.collect("fm.zh", m);
    fm_zl.collect("fm.zl", m);
    fm_y1h.collect("fm.y1h", m);
    fm_y1l.collect("fm.y1l", m);
    return m;
  }

  // Cumulative per-stage optimizer sets: stage 1 trains the core pair,
  // stage 2 adds hyper layer 1 with interim factorized y1 models, stage 3
  // swaps those for the outer hyper layer, the estimators, and the probes.
  std::vector<Tensor> trainables(int stage) const {
    if (stage < 1 || stage > 3) throw std::invalid_argument("trainables: stage must be 1..3");
    std::vector<Tensor> v;
    ge_stem.trainables(v);
    ge1.trainables(v);
    ge2.trainables(v);
    ge3.trainables(v);
    gd1.trainables(v);
    gd2.trainables(v);
    gd3.trainables(v);
    gd_head.trainables(v);
    if (stage >= 2) {
      he1.trainables(v);
      he2.trainables(v);
      he3.trainables(v);
      hd1.trainables(v);
      hd2.trainables(v);
      hd3.trainables(v);
    }
    if (stage == 2) {
      fm_y1h.trainables(v);
      fm_y1l.trainables(v);
    }
    if (stage >= 3) {
      fe1.trainables(v);
      fe2.trainables(v);
      fe3.trainables(v);
      fd1.trainables(v);
      fd2.trainables(v);
      fd3.trainables(v);
      e1.trainables(v);
      e2.trainables(v);
      e3.trainables(v);
      probe.trainables(v);
      fm_zh.trainables(v);
      fm_zl.trainables(v);
    }
    return v;
  }

  void reproject() {
    for (GoConvLayer* l : {&ge1, &ge2, &ge3, &he1, &he2, &he3, &fe1, &fe2, &fe3})
      l->reproject();
    for (GoTConvLayer* l : {&gd1, &gd2, &gd3, &hd1, &hd2, &hd3, &fd1, &fd2, &fd3})
      l->reproject();
    ge_stem.reproject();
  }

  // ---- persistence -----------------------------------------------------

  static constexpr const char* kMetaKey = "meta.config";

  void save(const std::string& path) const {
    std::map<std::string, Tensor> m = collect();
    m.emplace(kMetaKey,
              Tensor::from({1, 1, 1, 9},
                           {1.0, static_cast<double>(cfg.n),
                            static_cast<double>(static_cast<int>(cfg.hyper_scheme)),
                            static_cast<double>(static_cast<int>(cfg.metric)), cfg.lambda,
                            cfg.lambda1, cfg.lambda2, cfg.leaky_slope,
                            static_cast<double>(trained_stage)}));
    save_checkpoint(path, m);
  }

  static CodecNet load(const std::string& path) {
    std::map<std::string, Tensor> m = load_checkpoint(path);
    auto it = m.find(kMetaKey);
    if (it == m.end()) throw std::runtime_error("CodecNet::load: missing config record");
    const auto& meta = it->second.values();
    // Size 8 records predate the trained-stage slot and imply stage 0.
    if ((meta.size() != 8 && meta.size() != 9) || meta[0] != 1.0)
      throw std::runtime_error("CodecNet::load: unsupported config record");
    ModelConfig cfg;
    cfg.n = static_cast<std::int64_t>(meta[1]);
    cfg.hyper_scheme = static_cast<HyperScheme>(static_cast<int>(meta[2]));
    cfg.metric = static_cast<Metric>(static_cast<int>(meta[3]));
    cfg.lambda = meta[4];
    cfg.lambda1 = meta[5];
    cfg.lambda2 = meta[6];
    cfg.leaky_slope = meta[7];
    CodecNet net = CodecNet::init(cfg, 0);
    net.trained_stage = meta.size() == 9 ? static_cast<int>(meta[8]) : 0;
    std::map<std::string, Tensor> own = net.collect();
    for (auto& [name, tensor] : own) {
      auto rec = m.find(name);
      if (rec == m.end())
        throw std::runtime_error("CodecNet::load: missing tensor " + name);
      if (!(rec->second.shape() == tensor.shape()))
        throw std::runtime_error("CodecNet::load: shape mismatch for " + name);
      tensor.values() = rec->second.values();
    }
    if (m.size() != own.size() + 1)
      throw std::runtime_error("CodecNet::load: checkpoint holds unknown tensors");
    return net;
  }
};

}  // namespace ocmc
