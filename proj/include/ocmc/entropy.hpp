// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Probability models over quantized latents: conditional discretized
// Gaussians, a learned per-channel factorized model for the hyper latent,
// differentiable rate estimates, and integer CDF tables for the range coder.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocmc/tensor.hpp"

namespace ocmc {

inline constexpr double kSigmaFloor = 1e-9;
// Coder tables resolve probabilities in 1/2^16 steps; anything smaller
// costs at most 16 bits per symbol instead of diverging.
inline constexpr double kPmfFloor = 1.0 / 65536.0;
inline constexpr std::uint32_t kCdfTotal = 1u << 16;

// P(value quantizes to k) under N(mu, sigma^2) with unit-width bins.
inline double gaussian_pmf(long k, double mu, double sigma) {
  const double s = std::max(sigma, kSigmaFloor);
  const double inv = 1.0 / (s * std::sqrt(2.0));
  const double hi = std::erf((static_cast<double>(k) + 0.5 - mu) * inv);
  const double lo = std::erf((static_cast<double>(k) - 0.5 - mu) * inv);
  return 0.5 * (hi - lo);
}

// Tape version over whole tensors; x may carry quantization noise.
// sigma must be positive (model side guarantees exp-parameterization).
inline Tensor gaussian_likelihood(const Tensor& x, const Tensor& mu, const Tensor& sigma) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Tensor centered = sub(x, mu);
  Tensor scale = div(Tensor::filled(sigma.shape(), inv_sqrt2), sigma);
  Tensor hi = erf_t(mul(add_scalar(centered, 0.5), scale));
  Tensor lo = erf_t(mul(add_scalar(centered, -0.5), scale));
  return mul_scalar(sub(hi, lo), 0.5);
}

// -sum log2 p with a clamp that keeps early-training gradients finite.
inline Tensor rate_bits(const Tensor& likelihood) {
  Tensor p = clamp_t(likelihood, 1e-12, 2.0);
  return mul_scalar(sum_all(log_t(p)), -1.0 / std::log(2.0));
}

// Per-channel monotone cumulative built from four composed units: positive
// affine maps (softplus-reparameterized slopes, realized as grouped 1x1
// convs) with bounded tanh gates between them and a final sigmoid. Monotone
// in the input by construction, so c(k+0.5)-c(k-0.5) is a valid pmf.
struct FactorizedModel {
  std::int64_t channels = 0;
  static constexpr std::int64_t kWidth = 3;
  Tensor m1, m2, m3, m4;  // raw slopes, used through softplus
  Tensor b1, b2, b3, b4;
  Tensor a1, a2, a3;  // gate strengths

  static FactorizedModel init(std::int64_t channels, Rng& rng) {
    FactorizedModel f;
    f.channels = channels;
    const double scale = std::pow(10.0, 1.0 / 4.0);
    auto raw_slope = [&](std::int64_t cout_pc, std::int64_t cin_pc) {
      const double v = std::log(std::expm1(1.0 / (scale * static_cast<double>(cout_pc))));
      return Tensor::param({channels * cout_pc, cin_pc, 1, 1},
                           std::vector<double>(static_cast<std::size_t>(channels * cout_pc * cin_pc), v));
    };
    auto zero_param = [&](std::int64_t cout_pc) {
      return Tensor::param({1, channels * cout_pc, 1, 1},
                           std::vector<double>(static_cast<std::size_t>(channels * cout_pc), 0.0));
    };
    auto rand_bias = [&](std::int64_t cout_pc) {
      Tensor t = zero_param(cout_pc);
      for (auto& v : t.values()) v = rng.uniform_range(-0.5, 0.5);
      return t;
    };
    f.m1 = raw_slope(kWidth, 1);
    f.m2 = raw_slope(kWidth, kWidth);
    f.m3 = raw_slope(kWidth, kWidth);
    f.m4 = raw_slope(1, kWidth);
    f.b1 = rand_bias(kWidth);
    f.b2 = rand_bias(kWidth);
    f.b3 = rand_bias(kWidth);
    f.b4 = rand_bias(1);
    f.a1 = zero_param(kWidth);
    f.a2 = zero_param(kWidth);
    f.a3 = zero_param(kWidth);
    return f;
  }

  // x: (B, channels, H, W) -> cumulative probability elementwise.
  Tensor cumulative(const Tensor& x) const {
    if (x.shape().c != channels)
      throw std::invalid_argument("FactorizedModel: channel mismatch");
    const int g = static_cast<int>(channels);
    Tensor u = conv2d(x, softplus_t(m1), b1, 1, 0, g);
    u = add(u, cw_mul(tanh_t(u), tanh_t(a1)));
    u = conv2d(u, softplus_t(m2), b2, 1, 0, g);
    u = add(u, cw_mul(tanh_t(u), tanh_t(a2)));
    u = conv2d(u, softplus_t(m3), b3, 1, 0, g);
    u = add(u, cw_mul(tanh_t(u), tanh_t(a3)));
    u = conv2d(u, softplus_t(m4), b4, 1, 0, g);
    return sigmoid_t(u);
  }

  // P(z quantizes to its integer value), elementwise and differentiable.
  Tensor likelihood(const Tensor& z) const {
    return sub(cumulative(add_scalar(z, 0.5)), cumulative(add_scalar(z, -0.5)));
  }

  void collect(const std::string& prefix, std::map<std::string, Tensor>& out) const {
    out.emplace(prefix + ".m1", m1);
    out.emplace(prefix + ".m2", m2);
    out.emplace(prefix + ".m3", m3);
    out.emplace(prefix + ".m4", m4);
    out.emplace(prefix + ".b1", b1);
    out.emplace(prefix + ".b2", b2);
    out.emplace(prefix + ".b3", b3);
    out.emplace(prefix + ".b4", b4);
    out.emplace(prefix + ".a1", a1);
    out.emplace(prefix + ".a2", a2);
    out.emplace(prefix + ".a3", a3);
  }
  void trainables(std::vector<Tensor>& out) const {
    for (const Tensor* t : {&m1, &m2, &m3, &m4, &b1, &b2, &b3, &b4, &a1, &a2, &a3})
      out.push_back(*t);
  }
};

// Scalar cumulative for one channel; used by table building and eval rate.
inline double factorized_cumulative(const FactorizedModel& m, int channel, double x) {
  if (channel < 0 || channel >= m.channels)
    throw std::invalid_argument("factorized_cumulative: bad channel");
  NoGradGuard ng;
  const auto slope = [](const Tensor& t, std::size_t i) {
    const double v = t.values()[i];
    return v > 30.0 ? v : std::log1p(std::exp(v));
  };
  const std::int64_t W = FactorizedModel::kWidth;
  double u[FactorizedModel::kWidth];
  double nx[FactorizedModel::kWidth];
  for (std::int64_t i = 0; i < W; ++i) {
    const std::size_t row = static_cast<std::size_t>(channel * W + i);
    u[i] = slope(m.m1, row) * x + m.b1.values()[row];
    u[i] += std::tanh(m.a1.values()[row]) * std::tanh(u[i]);
  }
  const std::pair<const Tensor*, std::pair<const Tensor*, const Tensor*>> mids[] = {
      {&m.m2, {&m.b2, &m.a2}}, {&m.m3, {&m.b3, &m.a3}}};
  for (const auto& mid : mids) {
    const Tensor& mat = *mid.first;
    const Tensor& bias = *mid.second.first;
    const Tensor& gate = *mid.second.second;
    for (std::int64_t i = 0; i < W; ++i) {
      const std::size_t row = static_cast<std::size_t>(channel * W + i);
      double acc = bias.values()[row];
      for (std::int64_t j = 0; j < W; ++j)
        acc += slope(mat, static_cast<std::size_t>((channel * W + i) * W + j)) * u[j];
      nx[i] = acc;
      nx[i] += std::tanh(gate.values()[row]) * std::tanh(nx[i]);
    }
    for (std::int64_t i = 0; i < W; ++i) u[i] = nx[i];
  }
  double acc = m.b4.values()[static_cast<std::size_t>(channel)];
  for (std::int64_t j = 0; j < W; ++j)
    acc += slope(m.m4, static_cast<std::size_t>(channel * W + j)) * u[j];
  return 1.0 / (1.0 + std::exp(-acc));
}

inline double factorized_pmf(long k, const FactorizedModel& m, int channel) {
  const double p = factorized_cumulative(m, channel, static_cast<double>(k) + 0.5) -
                   factorized_cumulative(m, channel, static_cast<double>(k) - 0.5);
  return std::max(p, 0.0);
}

// Eval-side probability source: flat element index + integer value -> p.
using PmfProvider = std::function<double(std::int64_t index, long k)>;

inline PmfProvider gaussian_provider(const Tensor& mu, const Tensor& sigma) {
  return [mu, sigma](std::int64_t i, long k) {
    return gaussian_pmf(k, mu.values()[static_cast<std::size_t>(i)],
                        sigma.values()[static_cast<std::size_t>(i)]);
  };
}

inline PmfProvider factorized_provider(const FactorizedModel& m, Shape latent_shape) {
  const std::int64_t plane = latent_shape.h * latent_shape.w;
  const std::int64_t c = latent_shape.c;
  auto cache = std::make_shared<std::map<std::pair<int, long>, double>>();
  return [&m, plane, c, cache](std::int64_t i, long k) {
    const int ch = static_cast<int>((i / plane) % c);
    const auto key = std::make_pair(ch, k);
    auto it = cache->find(key);
    if (it != cache->end()) return it->second;
    const double p = factorized_pmf(k, m, ch);
    (*cache)[key] = p;
    return p;
  };
}

// Exact self-information of integer latents, floored to coder resolution.
inline double estimate_rate(const Tensor& latent, const PmfProvider& pmf) {
  const auto& v = latent.values();
  double bits = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const long k = std::lround(v[i]);
    bits -= std::log2(std::max(pmf(static_cast<std::int64_t>(i), k), kPmfFloor));
  }
  return bits;
}

// Differentiable train-mode rates.
inline Tensor estimate_rate(const Tensor& latent, const Tensor& mu, const Tensor& sigma) {
  return rate_bits(gaussian_likelihood(latent, mu, sigma));
}
inline Tensor estimate_rate(const Tensor& latent, const FactorizedModel& model) {
  return rate_bits(model.likelihood(latent));
}

// Integer CDF table over the contiguous symbol range [v_min, v_max].
struct QuantizedCdf {
  long v_min = 0;
  long v_max = -1;
  std::vector<std::uint32_t> cum;  // size symbols()+1; cum[0]=0, cum.back()=2^16

  int symbols() const { return static_cast<int>(v_max - v_min + 1); }
  std::uint32_t lo(int sym) const { return cum[static_cast<std::size_t>(sym)]; }
  std::uint32_t hi(int sym) const { return cum[static_cast<std::size_t>(sym) + 1]; }
};

// Largest-remainder rounding of pmf to integer counts totaling 2^16, every
// symbol kept codable (count >= 1); fully deterministic including ties.
inline QuantizedCdf build_quantized_cdf(const std::vector<double>& pmf, long v_min) {
  const std::size_t n = pmf.size();
  if (n == 0) throw std::invalid_argument("build_quantized_cdf: empty pmf");
  if (n > kCdfTotal) throw std::invalid_argument("build_quantized_cdf: too many symbols");
  double sum = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0)) throw std::invalid_argument("build_quantized_cdf: negative probability");
    sum += p;
  }
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i)
    target[i] = (sum > 0 ? pmf[i] / sum : 1.0 / static_cast<double>(n)) *
                static_cast<double>(kCdfTotal);

  std::vector<std::int64_t> counts(n);
  std::vector<std::pair<double, std::size_t>> rem(n);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    counts[i] = static_cast<std::int64_t>(std::floor(target[i]));
    rem[i] = {target[i] - static_cast<double>(counts[i]), i};
    total += counts[i];
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // tie: lower index wins
  });
  for (std::size_t i = 0; total < static_cast<std::int64_t>(kCdfTotal) && i < n; ++i) {
    ++counts[rem[i].second];
    ++total;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (counts[i] == 0) {
      counts[i] = 1;
      ++total;
    }
  while (total != static_cast<std::int64_t>(kCdfTotal)) {
    // Adjust against the largest count so floors are never violated.
    std::size_t big = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (counts[i] > counts[big]) big = i;
    if (total > static_cast<std::int64_t>(kCdfTotal)) {
      if (counts[big] <= 1)
        throw std::logic_error("build_quantized_cdf: cannot satisfy floor");
      --counts[big];
      --total;
    } else {
      ++counts[big];
      ++total;
    }
  }

  QuantizedCdf q;
  q.v_min = v_min;
  q.v_max = v_min + static_cast<long>(n) - 1;
  q.cum.resize(n + 1);
  q.cum[0] = 0;
  for (std::size_t i = 0; i < n; ++i)
    q.cum[i + 1] = q.cum[i] + static_cast<std::uint32_t>(counts[i]);
  return q;
}

// Table for one stream element under its own Gaussian parameters.
inline QuantizedCdf gaussian_cdf_table(double mu, double sigma, long v_min, long v_max) {
  if (v_max < v_min) throw std::invalid_argument("gaussian_cdf_table: empty range");
  std::vector<double> pmf(static_cast<std::size_t>(v_max - v_min + 1));
  for (long k = v_min; k <= v_max; ++k)
    pmf[static_cast<std::size_t>(k - v_min)] = std::max(gaussian_pmf(k, mu, sigma), kPmfFloor);
  return build_quantized_cdf(pmf, v_min);
}

inline QuantizedCdf factorized_cdf_table(const FactorizedModel& m, int channel,
                                         long v_min, long v_max) {
  if (v_max < v_min) throw std::invalid_argument("factorized_cdf_table: empty range");
  std::vector<double> pmf(static_cast<std::size_t>(v_max - v_min + 1));
  for (long k = v_min; k <= v_max; ++k)
    pmf[static_cast<std::size_t>(k - v_min)] = std::max(factorized_pmf(k, m, channel), kPmfFloor);
  return build_quantized_cdf(pmf, v_min);
}

}  // namespace ocmc
