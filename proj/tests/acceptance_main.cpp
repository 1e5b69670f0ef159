// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance gate. Each criterion prints one PASS/FAIL line with
// supporting numbers; the process exits with the number of failures. The
// suite is deterministic: fixed seeds everywhere, and timing comparisons
// carry a measured noise floor rather than raw strict inequalities.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "ocmc/codec.hpp"
#include "ocmc/metrics.hpp"
#include "ocmc/trainer.hpp"
#include "synthetic.hpp"

namespace ocmc {
namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---- shared fixtures -----------------------------------------------------

// Smooth band-limited image: per channel, a few random low-frequency
// sinusoids plus a ramp. Learnable by a small model, unlike value noise.
Image8 smooth_image(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w * h * 3));
  for (int c = 0; c < 3; ++c) {
    double fx[4], fy[4], ph[4], amp[4];
    for (int k = 0; k < 4; ++k) {
      fx[k] = rng.uniform_range(0.5, 3.0) * 2.0 * M_PI / static_cast<double>(w);
      fy[k] = rng.uniform_range(0.5, 3.0) * 2.0 * M_PI / static_cast<double>(h);
      ph[k] = rng.uniform_range(0.0, 6.28);
      amp[k] = rng.uniform_range(20.0, 45.0);
    }
    const double gx = rng.uniform_range(-40.0, 40.0) / static_cast<double>(w);
    const double gy = rng.uniform_range(-40.0, 40.0) / static_cast<double>(h);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double v = 128.0 + gx * static_cast<double>(x) + gy * static_cast<double>(y);
        for (int k = 0; k < 4; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  }
  return img;
}

Image8 random_image(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w * h * 3));
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.uniform() * 256.0);
  return img;
}

std::vector<Tensor> crops(const std::vector<Image8>& srcs, std::int64_t patch,
                          std::int64_t count, std::uint64_t seed) {
  std::vector<Tensor> out;
  Rng rng(seed);
  for (std::int64_t i = 0; i < count; ++i) {
    const Image8& s = srcs[static_cast<std::size_t>(i) % srcs.size()];
    const std::int64_t x0 =
        static_cast<std::int64_t>(rng.uniform() * static_cast<double>(s.width - patch));
    const std::int64_t y0 =
        static_cast<std::int64_t>(rng.uniform() * static_cast<double>(s.height - patch));
    Image8 c;
    c.width = patch;
    c.height = patch;
    c.rgb.resize(static_cast<std::size_t>(patch * patch * 3));
    for (std::int64_t y = 0; y < patch; ++y)
      for (std::int64_t x = 0; x < patch; ++x)
        for (int ch = 0; ch < 3; ++ch) c.at(x, y, ch) = s.at(x0 + x, y0 + y, ch);
    out.push_back(image_to_tensor(c));
  }
  return out;
}

ModelConfig desk_cfg(std::int64_t n, HyperScheme scheme) {
  ModelConfig cfg;
  cfg.n = n;
  cfg.hyper_scheme = scheme;
  return cfg;
}

// ---- criterion 1: gradient checks ---------------------------------------

bool crit_gradients(std::string& detail) {
  const double t_start = now_s();
  using testutil::check_gradients;
  using testutil::random_tensor;
  struct Case {
    const char* name;
    double err;
  };
  std::vector<Case> cases;
  double worst = 0.0;
  std::string worst_name = "none";
  auto run = [&](const char* name, std::vector<Tensor> inputs,
                 std::function<Tensor(const std::vector<Tensor>&)> f) {
    auto r = check_gradients(std::move(inputs), std::move(f));
    cases.push_back({name, r.max_err});
    if (r.max_err > worst) {
      worst = r.max_err;
      worst_name = name;
    }
  };
  Rng rng(301);

  {
    Tensor x = random_tensor({1, 3, 5, 5}, rng, -1, 1, true);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = random_tensor({1, 4, 1, 1}, rng, -0.2, 0.2, true);
    run("conv", {x, w, b},
        [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1, 1); });
  }
  {
    Tensor x = random_tensor({1, 4, 6, 6}, rng, -1, 1, true);
    Tensor w = random_tensor({4, 2, 3, 3}, rng, -0.5, 0.5, true);
    run("conv-grouped-strided", {x, w}, [](const std::vector<Tensor>& in) {
      return conv2d(in[0], in[1], Tensor{}, 2, 1, 2);
    });
  }
  {
    Tensor x = random_tensor({1, 3, 4, 4}, rng, -1, 1, true);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = random_tensor({1, 2, 1, 1}, rng, -0.2, 0.2, true);
    run("tconv", {x, w, b}, [](const std::vector<Tensor>& in) {
      return conv2d_transpose(in[0], in[1], in[2], 2, 1, 1);
    });
  }
  {
    Tensor x = random_tensor({1, 3, 4, 4}, rng, 0.3, 1.2, true);
    Tensor beta = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5, true);
    Tensor gamma = random_tensor({3, 3, 1, 1}, rng, 0.05, 0.3, true);
    run("gdn", {x, beta, gamma}, [](const std::vector<Tensor>& in) {
      GdnParams p;
      p.beta = in[1];
      p.gamma = in[2];
      return gdn(in[0], p);
    });
    Tensor x2 = random_tensor({1, 3, 4, 4}, rng, 0.3, 1.2, true);
    run("igdn", {x2, beta, gamma}, [](const std::vector<Tensor>& in) {
      GdnParams p;
      p.beta = in[1];
      p.gamma = in[2];
      return igdn(in[0], p);
    });
  }
  {
    Tensor x = random_tensor({1, 2, 4, 4}, rng, 0.1, 1.0, true);
    for (auto& v : x.values())  // keep clear of the kink at zero
      if (rng.uniform() < 0.5) v = -v;
    run("leaky-relu", {x},
        [](const std::vector<Tensor>& in) { return leaky_relu(in[0], 0.2); });
  }
  {
    GoConvLayer lay = make_goconv(2, 2, 2, 2, 2, Act::gdn, rng);
    Tensor h = random_tensor({1, 2, 8, 8}, rng, -1, 1, true);
    Tensor l = random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
    run("goconv-high", {h, l, lay.w.w_hh, lay.w.w_lh}, [lay](const std::vector<Tensor>& in) {
      return lay.forward({in[0], in[1]}).high;
    });
    run("goconv-low", {h, l, lay.w.w_ll, lay.w.w_hl}, [lay](const std::vector<Tensor>& in) {
      return lay.forward({in[0], in[1]}).low;
    });
  }
  {
    GoTConvLayer lay = make_gotconv(2, 2, 2, 2, 2, Act::igdn, rng);
    Tensor h = random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
    Tensor l = random_tensor({1, 2, 2, 2}, rng, -1, 1, true);
    run("gotconv-high", {h, l, lay.w.w_hh}, [lay](const std::vector<Tensor>& in) {
      return lay.forward({in[0], in[1]}).high;
    });
    run("gotconv-low", {h, l, lay.w.w_ll}, [lay](const std::vector<Tensor>& in) {
      return lay.forward({in[0], in[1]}).low;
    });
  }
  {
    Tensor latent = random_tensor({1, 2, 4, 4}, rng, -2, 2, true);
    Tensor mu = random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
    Tensor sigma = random_tensor({1, 2, 4, 4}, rng, 0.4, 1.5, true);
    run("gaussian-rate", {latent, mu, sigma}, [](const std::vector<Tensor>& in) {
      return estimate_rate(in[0], in[1], in[2]);
    });
  }
  {
    FactorizedModel fm = FactorizedModel::init(2, rng);
    Tensor latent = random_tensor({1, 2, 3, 3}, rng, -2, 2, true);
    run("factorized-rate", {latent, fm.m1, fm.b2, fm.a1, fm.m4},
        [fm](const std::vector<Tensor>& in) { return estimate_rate(in[0], fm); });
  }
  {
    Tensor x = random_tensor({1, 3, 6, 6}, rng, -0.9, 0.9, false);
    Tensor x_hat = random_tensor({1, 3, 6, 6}, rng, -0.9, 0.9, true);
    RateSplit rate{Tensor::from({1, 1, 1, 1}, {40.0}), Tensor::from({1, 1, 1, 1}, {24.0})};
    run("rd-loss", {x_hat}, [x, rate](const std::vector<Tensor>& in) {
      return loss_rd(x, in[0], rate, 0.02, Metric::mse);
    });
  }
  {
    FidelityProbe probe = FidelityProbe::init(2, rng);
    Tensor yl = random_tensor({1, 2, 5, 5}, rng, -1, 1, true);
    Tensor y1l = random_tensor({1, 2, 3, 3}, rng, -1, 1, true);
    run("fidelity-loss", {yl, y1l, probe.theta, probe.omega},
        [probe](const std::vector<Tensor>& in) {
          return loss_if(in[0], in[1], probe, 1.0, 0.5);
        });
  }
  {
    FidelityProbe probe = FidelityProbe::init(2, rng);
    Tensor x = random_tensor({1, 3, 6, 6}, rng, -0.9, 0.9, false);
    Tensor x_hat = random_tensor({1, 3, 6, 6}, rng, -0.9, 0.9, true);
    Tensor yl = random_tensor({1, 2, 4, 4}, rng, -1, 1, true);
    RateSplit rate{Tensor::from({1, 1, 1, 1}, {30.0}), Tensor::from({1, 1, 1, 1}, {20.0})};
    run("total-loss", {x_hat, yl, probe.theta}, [x, rate, probe](const std::vector<Tensor>& in) {
      Tensor rd = loss_rd(x, in[0], rate, 0.02, Metric::mse);
      return loss_total(rd, loss_if(in[1], in[1], probe, 1.0, 0.5));
    });
  }

  const double elapsed = now_s() - t_start;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu op families, worst rel err %.2e (%s), limit 1e-5",
                cases.size(), worst, worst_name.c_str());
  detail = buf;
  return worst < 1e-5 && elapsed < 120.0;
}

// ---- criterion 2: entropy coding ----------------------------------------

bool crit_coding(std::string& detail) {
  const double t_start = now_s();
  Rng rng(555);
  const int kInstances = 100000;
  int failures = 0;
  for (int inst = 0; inst < kInstances; ++inst) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.uniform() * 31.0);
    const long v_min = -static_cast<long>(rng.uniform() * 50.0);
    std::vector<double> pmf(m);
    const double skew = 1.0 + rng.uniform() * 3.0;
    for (auto& p : pmf) p = std::pow(rng.uniform() + 1e-3, skew);
    QuantizedCdf table = build_quantized_cdf(pmf, v_min);
    const std::size_t count = 1 + static_cast<std::size_t>(rng.uniform() * 63.0);
    double total = 0;
    for (double p : pmf) total += p;
    std::vector<long> symbols(count);
    for (auto& s : symbols) {
      double u = rng.uniform() * total, acc = 0;
      std::size_t k = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        acc += pmf[i];
        if (u < acc) {
          k = i;
          break;
        }
      }
      s = v_min + static_cast<long>(k);
    }
    ByteStream bytes = rc_encode(symbols, [&](std::size_t) -> const QuantizedCdf& { return table; });
    std::vector<long> back = rc_decode(bytes, table, count);
    if (back != symbols) ++failures;
  }

  // Efficiency on i.i.d. sources: actual bits within 2% + 64 of the
  // sequence self-information under the source distribution.
  int eff_failures = 0;
  double worst_ratio = 0.0;
  for (int src = 0; src < 40; ++src) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.uniform() * 14.0);
    std::vector<double> pmf(m);
    double total = 0;
    for (auto& p : pmf) {
      p = 0.02 + rng.uniform();
      total += p;
    }
    for (auto& p : pmf) p /= total;
    QuantizedCdf table = build_quantized_cdf(pmf, 0);
    const std::size_t count = 20000;
    std::vector<long> symbols(count);
    double bound_bits = 0;
    for (auto& s : symbols) {
      double u = rng.uniform(), acc = 0;
      std::size_t k = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        acc += pmf[i];
        if (u < acc) {
          k = i;
          break;
        }
      }
      s = static_cast<long>(k);
      bound_bits -= std::log2(pmf[k]);
    }
    ByteStream bytes = rc_encode(symbols, [&](std::size_t) -> const QuantizedCdf& { return table; });
    if (rc_decode(bytes, table, count) != symbols) ++eff_failures;
    const double actual = 8.0 * static_cast<double>(bytes.size());
    if (actual > 1.02 * bound_bits + 64.0) ++eff_failures;
    worst_ratio = std::max(worst_ratio, actual / bound_bits);
  }

  const double elapsed = now_s() - t_start;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%d round-trips, %d failures; 40 iid sources, worst actual/bound %.4f, "
                "limit 1.02 + 64b",
                kInstances, failures, worst_ratio);
  detail = buf;
  return failures == 0 && eff_failures == 0 && elapsed < 60.0;
}

// ---- criterion 3: codec round-trip --------------------------------------

struct RoundTripStats {
  bool latents_equal = false, recon_equal = false, rate_ok = false;
  double rate_err = 0.0, allowed = 0.0;
};

RoundTripStats round_trip_one(const CodecNet& net, const Image8& img) {
  RoundTripStats st;
  EncodeResult enc = encode_image(net, img);
  DecodeResult dec = decode_image(net, enc.bytes);

  // Independent encoder-side reference pass.
  NoGradGuard guard;
  Tensor x = detail::pad_replicate(image_to_tensor(img), net.cfg.pad_factor());
  auto [x_hat, lb] = net.forward_full(x, RunMode::eval);
  st.latents_equal = lb.y_q.high.values() == dec.y_q.high.values() &&
                     lb.y_q.low.values() == dec.y_q.low.values() &&
                     lb.y1_q.high.values() == dec.y1_q.high.values() &&
                     lb.y1_q.low.values() == dec.y1_q.low.values() &&
                     lb.z_q.high.values() == dec.z_q.high.values() &&
                     lb.z_q.low.values() == dec.z_q.low.values();
  Image8 local = tensor_to_image(detail::crop_tl(x_hat, img.height, img.width));
  st.recon_equal = local.rgb == dec.image.rgb;

  const double actual = 8.0 * static_cast<double>(enc.container.payload_bytes());
  const double est = enc.estimated_total_bits();
  st.rate_err = std::abs(actual - est);
  st.allowed = 0.02 * est + 384.0;
  st.rate_ok = st.rate_err <= st.allowed;
  return st;
}

bool crit_codec_roundtrip(std::string& detail) {
  CodecNet s2net = CodecNet::init(desk_cfg(8, HyperScheme::scheme2), 2026);
  CodecNet s1net = CodecNet::init(desk_cfg(8, HyperScheme::scheme1), 2027);
  std::vector<std::pair<const CodecNet*, Image8>> work = {
      {&s2net, testutil::synth_base()}, {&s2net, testutil::synth_b1()},
      {&s2net, testutil::synth_b2()},   {&s2net, testutil::synth_b3()},
      {&s2net, random_image(320, 192, 88)}, {&s2net, random_image(131, 57, 89)},
      {&s1net, smooth_image(200, 144, 90)}};
  int bad = 0;
  double worst_margin = 0.0;
  for (const auto& [net, img] : work) {
    RoundTripStats st = round_trip_one(*net, img);
    if (!(st.latents_equal && st.recon_equal && st.rate_ok)) ++bad;
    worst_margin = std::max(worst_margin, st.rate_err / st.allowed);
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%zu images (2 model variants): exact latents + identical reconstruction, "
                "worst rate gap %.0f%% of allowance, %d failures",
                work.size(), 100.0 * worst_margin, bad);
  detail = buf;
  return bad == 0;
}

// ---- criterion 4: stream causality --------------------------------------

struct ParamSet {
  // Gaussian streams only; the two innermost streams use the factorized
  // models, whose parameters are network weights independent of any latent.
  GaussianParams y1L, y1H, yL, yH;
};

ParamSet params_from_latents(const CodecNet& net, const DualRes& z_q, const DualRes& y1_q,
                             const DualRes& y_q) {
  ParamSet p;
  DualRes phi = net.hyper_synthesis_2(z_q);
  p.y1L = net.y1l_params_from_phi(phi.low);
  p.y1H = net.crpe_e1(phi.high, y1_q.low);
  DualRes psi = net.hyper_synthesis_1(y1_q);
  p.yL = net.crpe_e2(psi.low, y1_q.low);
  p.yH = net.crpe_e3(psi.high, y_q.low);
  return p;
}

bool params_equal(const GaussianParams& a, const GaussianParams& b) {
  return a.mu.values() == b.mu.values() && a.sigma.values() == b.sigma.values();
}

bool crit_causality(std::string& detail) {
  CodecNet net = CodecNet::init(desk_cfg(8, HyperScheme::scheme2), 2026);
  NoGradGuard guard;
  Tensor x = detail::pad_replicate(image_to_tensor(testutil::synth_base()), net.cfg.pad_factor());
  auto [x_hat, lb] = net.forward_full(x, RunMode::eval);
  (void)x_hat;
  const ParamSet base = params_from_latents(net, lb.z_q, lb.y1_q, lb.y_q);

  // Determinism of the probe itself.
  const ParamSet again = params_from_latents(net, lb.z_q, lb.y1_q, lb.y_q);
  if (!(params_equal(base.y1L, again.y1L) && params_equal(base.yH, again.yH))) {
    detail = "parameter recomputation is not deterministic";
    return false;
  }

  // Streams in decode order; each entry perturbs one latent tensor.
  struct Probe {
    const char* name;
    int order;  // position in the stream order
    std::function<DualRes(const DualRes&, std::size_t)> bump_z, bump_y1, bump_y;
  };
  auto bump = [](const DualRes& d, bool high, std::size_t at) {
    DualRes out = d;
    Tensor t = high ? d.high : d.low;
    std::vector<double> v = t.values();
    v[at % v.size()] += 1.0;
    Tensor repl = Tensor::from(t.shape(), std::move(v));
    (high ? out.high : out.low) = repl;
    return out;
  };

  int checks = 0, violations = 0;
  bool live_ok = true;
  // order: zH(0) zL(1) y1L(2) y1H(3) yL(4) yH(5)
  for (int j = 0; j < 6; ++j) {
    for (std::size_t pos : {std::size_t{0}, std::size_t{97}, std::size_t{100000}}) {
      DualRes z_q = lb.z_q, y1_q = lb.y1_q, y_q = lb.y_q;
      if (j == 0) z_q = bump(z_q, true, pos);
      if (j == 1) z_q = bump(z_q, false, pos);
      if (j == 2) y1_q = bump(y1_q, false, pos);
      if (j == 3) y1_q = bump(y1_q, true, pos);
      if (j == 4) y_q = bump(y_q, false, pos);
      if (j == 5) y_q = bump(y_q, true, pos);
      const ParamSet p = params_from_latents(net, z_q, y1_q, y_q);

      // Earlier gaussian streams must be bit-identical. Stream order index
      // of the gaussian streams: y1L=2, y1H=3, yL=4, yH=5.
      if (j > 2 && !params_equal(p.y1L, base.y1L)) ++violations;
      if (j > 3 && !params_equal(p.y1H, base.y1H)) ++violations;
      if (j > 4 && !params_equal(p.yL, base.yL)) ++violations;
      checks += (j > 2) + (j > 3) + (j > 4);

      // Liveness: perturbations must reach the streams they may feed.
      if (j == 1 && params_equal(p.y1L, base.y1L)) live_ok = false;
      if (j == 2 && params_equal(p.y1H, base.y1H)) live_ok = false;
      if (j == 2 && params_equal(p.yL, base.yL)) live_ok = false;
      if (j == 4 && params_equal(p.yH, base.yH)) live_ok = false;
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "%d ordered-pair checks across 3 positions: %d violations; factorized "
                "streams carry weight-only tables; downstream liveness %s",
                checks, violations, live_ok ? "confirmed" : "BROKEN");
  detail = buf;
  return violations == 0 && live_ok;
}

// ---- criterion 5: parallel decode ---------------------------------------

bool crit_parallel(std::string& detail) {
  CodecNet net = CodecNet::init(desk_cfg(8, HyperScheme::scheme2), 2026);
  std::vector<Image8> imgs = {testutil::synth_base(), testutil::synth_b2(),
                              random_image(131, 57, 89), random_image(512, 384, 91)};
  for (const Image8& img : imgs) {
    EncodeResult enc = encode_image(net, img);
    DecodeResult ser = decode_image(net, enc.bytes, false);
    DecodeResult par = decode_image(net, enc.bytes, true);
    if (ser.image.rgb != par.image.rgb || ser.y_q.high.values() != par.y_q.high.values() ||
        ser.z_q.low.values() != par.z_q.low.values()) {
      detail = "parallel decode output differs from serial";
      return false;
    }
  }

  // Wall-clock sanity on the largest image: interleaved runs, best-of-5,
  // with the serial path's own spread as the noise floor.
  EncodeResult enc = encode_image(net, imgs.back());
  decode_image(net, enc.bytes, false);  // warm both paths
  decode_image(net, enc.bytes, true);
  double ser_min = 1e30, ser_max = 0, par_min = 1e30;
  for (int i = 0; i < 5; ++i) {
    double t0 = now_s();
    decode_image(net, enc.bytes, false);
    double t1 = now_s();
    decode_image(net, enc.bytes, true);
    double t2 = now_s();
    ser_min = std::min(ser_min, t1 - t0);
    ser_max = std::max(ser_max, t1 - t0);
    par_min = std::min(par_min, t2 - t1);
  }
  const double floor = std::max(ser_max - ser_min, 0.001);
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "byte-identical on 4 images; 512x384 best-of-5: serial %.3fs, parallel "
                "%.3fs (noise floor %.3fs)",
                ser_min, par_min, floor);
  detail = buf;
  return par_min <= ser_min + floor;
}

// ---- criterion 6: training trends ---------------------------------------

struct EvalPoint {
  double bpp = 0, mse = 0, lshare = 0;
};

EvalPoint eval_net(const CodecNet& net, const std::vector<Image8>& imgs) {
  EvalPoint e;
  for (const Image8& img : imgs) {
    EncodeResult er = encode_image(net, img);
    DecodeResult dr = decode_image(net, er.bytes);
    BitAllocation a = bit_allocation(er.container);
    e.bpp += a.bpp_total;
    e.lshare += a.bpp_l / (a.bpp_l + a.bpp_h);
    double acc = 0;
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
      const double d =
          static_cast<double>(img.rgb[i]) - static_cast<double>(dr.image.rgb[i]);
      acc += d * d;
    }
    e.mse += acc / static_cast<double>(img.rgb.size());
  }
  const double n = static_cast<double>(imgs.size());
  e.bpp /= n;
  e.mse /= n;
  e.lshare /= n;
  return e;
}

double ma(const std::vector<TrainLogRow>& log, std::size_t from, std::size_t n) {
  double acc = 0;
  for (std::size_t i = from; i < from + n; ++i) acc += log[i].loss;
  return acc / static_cast<double>(n);
}

bool improved(const std::vector<TrainLogRow>& log) {
  const std::size_t w = std::min<std::size_t>(25, log.size() / 4);
  return ma(log, log.size() - w, w) < ma(log, 0, w);
}

bool crit_training(std::string& detail) {
  const double t_start = now_s();
  const auto tdir = std::filesystem::temp_directory_path();
  const std::string s1_path = (tdir / "accept_s1.ckpt").string();
  const std::string s2_path = (tdir / "accept_s2.ckpt").string();
  const std::string hard_s2_path = (tdir / "accept_hard_s2.ckpt").string();

  auto tc = [](int stage, std::int64_t iters, std::int64_t patch, std::uint64_t seed) {
    TrainConfig t;
    t.stage = stage;
    t.iterations = iters;
    t.patch = patch;
    t.lr = 1e-3;
    t.seed = seed;
    return t;
  };

  // (a)+(b): a smooth, learnable corpus, evaluated in-distribution, where
  // the rate-distortion trade-off is live rather than capacity-limited.
  std::vector<Image8> smooth = {smooth_image(256, 192, 21), smooth_image(256, 192, 22),
                                smooth_image(192, 256, 23)};
  std::vector<Image8> smooth_eval = {smooth[0], smooth[1]};
  auto p64 = crops(smooth, 64, 8, 77);
  auto p128 = crops(smooth, 128, 6, 78);

  CodecNet s1 = CodecNet::init(desk_cfg(16, HyperScheme::scheme2), 9);
  auto log1 = train_stage(s1, p64, tc(1, 1000, 64, 11));
  s1.save(s1_path);
  bool stages_improve = improved(log1);

  const double lambdas[3] = {0.001, 0.003, 0.01};
  EvalPoint ladder[3];
  for (int k = 0; k < 3; ++k) {
    CodecNet net = CodecNet::load(s1_path);
    net.cfg.lambda = lambdas[k];
    auto log2 = train_stage(net, p128, tc(2, 400, 128, 12));
    auto log3 = train_stage(net, p128, tc(3, 800, 128, 13));
    if (k == 2) stages_improve = stages_improve && improved(log2) && improved(log3);
    ladder[k] = eval_net(net, smooth_eval);
  }
  const bool bpp_monotone =
      ladder[0].bpp <= ladder[1].bpp && ladder[1].bpp <= ladder[2].bpp;
  const bool mse_monotone =
      ladder[0].mse >= ladder[1].mse && ladder[1].mse >= ladder[2].mse;

  // (c): the fidelity-probe ablation needs the under-utilized-LR regime,
  // which the hard high-frequency corpus produces; twin stage-3 runs share
  // seed, data, and the stage-2 start.
  std::vector<Image8> hard = {testutil::synth_base(), testutil::synth_b2(),
                              testutil::synth_b3()};
  std::vector<Image8> hard_eval = {hard[0], hard[1]};
  auto h64 = crops(hard, 64, 8, 77);
  auto h128 = crops(hard, 128, 6, 78);
  CodecNet hs = CodecNet::init(desk_cfg(16, HyperScheme::scheme2), 9);
  train_stage(hs, h64, tc(1, 1000, 64, 11));
  train_stage(hs, h128, tc(2, 400, 128, 12));
  hs.save(hard_s2_path);

  CodecNet on = CodecNet::load(hard_s2_path);
  on.cfg.lambda1 = 1.0;
  on.cfg.lambda2 = 1.0;
  train_stage(on, h128, tc(3, 800, 128, 13));
  EvalPoint on_e = eval_net(on, hard_eval);

  CodecNet off = CodecNet::load(hard_s2_path);
  off.cfg.lambda1 = 0.0;
  off.cfg.lambda2 = 0.0;
  train_stage(off, h128, tc(3, 800, 128, 13));
  EvalPoint off_e = eval_net(off, hard_eval);
  const bool ablation_ok = on_e.lshare > off_e.lshare;

  const double elapsed = now_s() - t_start;
  char buf[320];
  std::snprintf(
      buf, sizeof(buf),
      "stage losses improve %s; lambda ladder bpp %.3f/%.3f/%.3f mse %.1f/%.1f/%.1f "
      "(monotone %s/%s); LR share with probe loss %.3f vs without %.3f; %.0fs of 1800s",
      stages_improve ? "yes" : "NO", ladder[0].bpp, ladder[1].bpp, ladder[2].bpp,
      ladder[0].mse, ladder[1].mse, ladder[2].mse, bpp_monotone ? "yes" : "NO",
      mse_monotone ? "yes" : "NO", on_e.lshare, off_e.lshare, elapsed);
  detail = buf;
  return stages_improve && bpp_monotone && mse_monotone && ablation_ok && elapsed <= 1800.0;
}

// ---- criterion 7: quality metrics ---------------------------------------

bool crit_metrics(std::string& detail) {
  const Image8 base = testutil::synth_base();
  struct Ref {
    Image8 img;
    double psnr_ref, msssim_ref;
  };
  const std::vector<Ref> refs = {{testutil::synth_b1(), 36.7355400925, 0.9997576211},
                                 {testutil::synth_b2(), 30.6916067041, 0.9949056434},
                                 {testutil::synth_b3(), 8.3775031397, 0.7376473715}};
  double worst = 0;
  for (const Ref& r : refs) {
    worst = std::max(worst, std::abs(psnr(base, r.img) - r.psnr_ref));
    worst = std::max(worst, std::abs(ms_ssim(base, r.img) - r.msssim_ref));
  }

  const std::vector<double> q = {30, 32, 34, 36};
  const std::vector<double> rate = {0.2, 0.35, 0.6, 1.0};
  std::vector<double> rate_11 = rate;
  for (auto& v : rate_11) v *= 1.1;
  const double bd_same = bd_rate(rate, q, rate, q);
  const double bd_offset = bd_rate(rate, q, rate_11, q);
  const bool db_exact = msssim_db(0.9) == 10.0;

  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "worst |delta| vs reference %.2e (limit 1e-4); identical-curve BD %.2e, "
                "1.1x-rate BD %+.4f%% (want +10 +/- 0.1); db(0.9)=10 %s",
                worst, bd_same, bd_offset, db_exact ? "exact" : "NOT EXACT");
  detail = buf;
  return worst < 1e-4 && std::abs(bd_same) < 1e-9 && std::abs(bd_offset - 10.0) < 0.1 &&
         db_exact;
}

// ---- criterion 8: container format --------------------------------------

bool crit_format(std::string& detail) {
  Container c;
  c.width = 501;
  c.height = 37;
  c.hyper_scheme = 2;
  c.n = 32;
  for (int s = 0; s < kStreamCount; ++s) {
    c.streams[s].v_min = -4 - s;
    c.streams[s].v_max = 3 + 2 * s;
    c.streams[s].bytes.assign(static_cast<std::size_t>(5 + 11 * s),
                              static_cast<std::uint8_t>(0x40 + s));
  }
  std::vector<std::uint8_t> bytes = serialize(c);
  Container back = parse(bytes);
  bool round_trip = back.width == c.width && back.height == c.height &&
                    back.hyper_scheme == c.hyper_scheme && back.n == c.n;
  for (int s = 0; s < kStreamCount; ++s)
    round_trip = round_trip && back.streams[s].v_min == c.streams[s].v_min &&
                 back.streams[s].v_max == c.streams[s].v_max &&
                 back.streams[s].bytes == c.streams[s].bytes;

  int rejections = 0;
  auto expect_reject = [&](std::vector<std::uint8_t> corrupt) {
    try {
      parse(corrupt);
    } catch (const std::exception&) {
      ++rejections;
    }
  };
  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  expect_reject(bad_magic);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 7);
  expect_reject(truncated);
  std::vector<std::uint8_t> short_header(bytes.begin(), bytes.begin() + 40);
  expect_reject(short_header);

  // A real encoded file must parse back to the same stream bytes.
  CodecNet net = CodecNet::init(desk_cfg(8, HyperScheme::scheme2), 2026);
  EncodeResult enc = encode_image(net, testutil::synth_b2());
  Container real = parse(enc.bytes);
  round_trip = round_trip && serialize(real) == enc.bytes;

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "synthetic + encoder containers round-trip %s; %d/3 corruptions rejected",
                round_trip ? "exactly" : "MISMATCH", rejections);
  detail = buf;
  return round_trip && rejections == 3;
}

}  // namespace
}  // namespace ocmc

int main() {
  using Criterion = std::pair<const char*, bool (*)(std::string&)>;
  const std::vector<Criterion> criteria = {
      {"gradient-checks", ocmc::crit_gradients},
      {"entropy-coding", ocmc::crit_coding},
      {"codec-round-trip", ocmc::crit_codec_roundtrip},
      {"stream-causality", ocmc::crit_causality},
      {"parallel-decode", ocmc::crit_parallel},
      {"training-trends", ocmc::crit_training},
      {"quality-metrics", ocmc::crit_metrics},
      {"container-format", ocmc::crit_format},
  };
  int failures = 0;
  const double t0 = ocmc::now_s();
  for (const auto& [name, fn] : criteria) {
    const double t = ocmc::now_s();
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::printf("[%s] %-17s %s (%.1fs)\n", ok ? "PASS" : "FAIL", name, detail.c_str(),
                ocmc::now_s() - t);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed (%.0fs total)\n", criteria.size() - failures,
              criteria.size(), ocmc::now_s() - t0);
  return failures;
}
