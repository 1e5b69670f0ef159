// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end still image codec: pads and analyzes an image, range-codes the
// six latent streams into a container, and reconstructs the image from the
// bytes alone. Entropy parameters are recomputed on the decode side from
// already-decoded streams, so no per-symbol context state is carried and
// whole streams can be processed with data parallelism.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <stdexcept>
#include <thread>
#include <vector>

#include "ocmc/container.hpp"
#include "ocmc/image.hpp"
#include "ocmc/model.hpp"
#include "ocmc/range_coder.hpp"

namespace ocmc {
namespace detail {

inline Tensor pad_replicate(const Tensor& x, std::int64_t factor) {
  const Shape s = x.shape();
  const std::int64_t ph = (s.h + factor - 1) / factor * factor;
  const std::int64_t pw = (s.w + factor - 1) / factor * factor;
  if (ph == s.h && pw == s.w) return x;
  Tensor out = Tensor::zeros({s.n, s.c, ph, pw});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < ph; ++i) {
        const std::int64_t si = std::min(i, s.h - 1);
        for (std::int64_t j = 0; j < pw; ++j) {
          const std::int64_t sj = std::min(j, s.w - 1);
          ov[static_cast<std::size_t>(((n * s.c + c) * ph + i) * pw + j)] =
              xv[static_cast<std::size_t>(((n * s.c + c) * s.h + si) * s.w + sj)];
        }
      }
  return out;
}

inline Tensor crop_tl(const Tensor& x, std::int64_t h, std::int64_t w) {
  const Shape s = x.shape();
  if (h > s.h || w > s.w) throw std::invalid_argument("crop_tl: crop larger than input");
  if (h == s.h && w == s.w) return x;
  Tensor out = Tensor::zeros({s.n, s.c, h, w});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j)
          ov[static_cast<std::size_t>(((n * s.c + c) * h + i) * w + j)] =
              xv[static_cast<std::size_t>(((n * s.c + c) * s.h + i) * s.w + j)];
  return out;
}

inline std::vector<long> symbols_of(const Tensor& q) {
  const auto& v = q.values();
  std::vector<long> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::lround(v[i]);
  return out;
}

inline Tensor tensor_from_symbols(const std::vector<long>& sym, const Shape& shape) {
  if (static_cast<std::int64_t>(sym.size()) != shape.elems())
    throw std::invalid_argument("tensor_from_symbols: size mismatch");
  Tensor out = Tensor::zeros(shape);
  for (std::size_t i = 0; i < sym.size(); ++i)
    out.values()[i] = static_cast<double>(sym[i]);
  return out;
}

// Runs fn over contiguous index chunks. Work per element is independent,
// so the partition never changes the result, only the wall clock.
template <typename Fn>
inline void parallel_chunks(std::int64_t count, int workers, const Fn& fn) {
  constexpr std::int64_t kMinChunk = 1024;
  const std::int64_t usable = std::min<std::int64_t>(workers, (count + kMinChunk - 1) / kMinChunk);
  if (usable <= 1) {
    fn(0, count);
    return;
  }
  const std::int64_t chunk = (count + usable - 1) / usable;
  std::vector<std::thread> pool;
  for (std::int64_t b = 0; b < count; b += chunk)
    pool.emplace_back([&fn, b, e = std::min(count, b + chunk)] { fn(b, e); });
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline int codec_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hc, 2u, 8u));
}

// One coding table per element, from that element's Gaussian parameters.
inline std::vector<QuantizedCdf> gaussian_tables(const Tensor& mu, const Tensor& sigma,
                                                 long v_min, long v_max, int workers = 1) {
  if (v_max < v_min) throw std::invalid_argument("gaussian_tables: empty range");
  const auto& mv = mu.values();
  const auto& sv = sigma.values();
  if (mv.size() != sv.size()) throw std::invalid_argument("gaussian_tables: shape mismatch");
  std::vector<QuantizedCdf> tables(mv.size());
  detail::parallel_chunks(static_cast<std::int64_t>(mv.size()), workers,
                          [&](std::int64_t b, std::int64_t e) {
                            for (std::int64_t i = b; i < e; ++i)
                              tables[static_cast<std::size_t>(i)] = gaussian_cdf_table(
                                  mv[static_cast<std::size_t>(i)],
                                  sv[static_cast<std::size_t>(i)], v_min, v_max);
                          });
  return tables;
}

// One coding table per channel of a factorized model.
inline std::vector<QuantizedCdf> factorized_tables(const FactorizedModel& m,
                                                   long v_min, long v_max) {
  std::vector<QuantizedCdf> tables;
  tables.reserve(static_cast<std::size_t>(m.channels));
  for (std::int64_t c = 0; c < m.channels; ++c)
    tables.push_back(factorized_cdf_table(m, static_cast<int>(c), v_min, v_max));
  return tables;
}

// Expected payload bits for a stream coded with range-conditioned tables.
// The coder transmits [lo, hi] in the header and renormalizes the floored
// pmf over that range, so the price of a symbol is measured against the
// conditioned distribution, not the raw model pmf over all integers.
// Actual payloads differ only by integer table rounding plus coder
// termination, a few bytes per stream.
inline double gaussian_stream_bits(const std::vector<long>& sym, const Tensor& mu,
                                   const Tensor& sigma, long lo, long hi) {
  const auto& mv = mu.values();
  const auto& sv = sigma.values();
  if (sym.size() != mv.size() || sym.size() != sv.size())
    throw std::invalid_argument("gaussian_stream_bits: shape mismatch");
  double bits = 0.0;
  for (std::size_t i = 0; i < sym.size(); ++i) {
    double norm = 0.0;
    double pk = 0.0;
    for (long k = lo; k <= hi; ++k) {
      const double p = std::max(gaussian_pmf(k, mv[i], sv[i]), kPmfFloor);
      norm += p;
      if (k == sym[i]) pk = p;
    }
    if (pk <= 0.0) throw std::invalid_argument("gaussian_stream_bits: symbol outside range");
    bits -= std::log2(pk / norm);
  }
  return bits;
}

inline double factorized_stream_bits(const std::vector<long>& sym, const FactorizedModel& fm,
                                     const Shape& shape, long lo, long hi) {
  if (static_cast<std::int64_t>(sym.size()) != shape.elems())
    throw std::invalid_argument("factorized_stream_bits: shape mismatch");
  const std::size_t width = static_cast<std::size_t>(hi - lo + 1);
  std::vector<std::vector<double>> bins(static_cast<std::size_t>(shape.c));
  std::vector<double> norm(static_cast<std::size_t>(shape.c), 0.0);
  for (std::int64_t c = 0; c < shape.c; ++c) {
    auto& b = bins[static_cast<std::size_t>(c)];
    b.resize(width);
    for (long k = lo; k <= hi; ++k) {
      const double p = std::max(factorized_pmf(k, fm, static_cast<int>(c)), kPmfFloor);
      b[static_cast<std::size_t>(k - lo)] = p;
      norm[static_cast<std::size_t>(c)] += p;
    }
  }
  const std::int64_t plane = shape.h * shape.w;
  double bits = 0.0;
  for (std::size_t i = 0; i < sym.size(); ++i) {
    if (sym[i] < lo || sym[i] > hi)
      throw std::invalid_argument("factorized_stream_bits: symbol outside range");
    const std::size_t c =
        static_cast<std::size_t>((static_cast<std::int64_t>(i) / plane) % shape.c);
    bits -= std::log2(bins[c][static_cast<std::size_t>(sym[i] - lo)] / norm[c]);
  }
  return bits;
}

struct LatentDims {
  Shape yh, yl, y1h, y1l, zh, zl;
};

// Latent resolutions implied by a padded image size. The analysis ladder
// halves four times to y.high; each low branch sits one octave below its
// high partner; the outer hyper layer drops one more octave in scheme 1.
inline LatentDims latent_dims(const ModelConfig& cfg, std::int64_t padded_h,
                              std::int64_t padded_w) {
  if (padded_h % cfg.pad_factor() != 0 || padded_w % cfg.pad_factor() != 0)
    throw std::invalid_argument("latent_dims: dims not padded");
  const std::int64_t hc = cfg.half();
  auto at = [&](std::int64_t div) {
    return Shape{1, hc, padded_h / div, padded_w / div};
  };
  LatentDims d;
  d.yh = at(16);
  d.yl = at(32);
  d.y1h = at(64);
  d.y1l = at(128);
  const bool s1 = cfg.hyper_scheme == HyperScheme::scheme1;
  d.zh = at(s1 ? 128 : 64);
  d.zl = at(s1 ? 256 : 128);
  return d;
}

struct EncodeResult {
  ByteStream bytes;  // serialized container, ready to write to disk
  Container container;
  std::array<double, kStreamCount> estimated_bits{};

  double estimated_total_bits() const {
    double s = 0.0;
    for (double b : estimated_bits) s += b;
    return s;
  }
};

struct DecodeResult {
  Image8 image;
  DualRes y_q, y1_q, z_q;  // decoded integer latents
};

inline EncodeResult encode_image(const CodecNet& net, const Image8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width * img.height * 3))
    throw std::invalid_argument("encode_image: malformed image");
  if (img.width < 8 || img.height < 8)
    throw std::invalid_argument("encode_image: images smaller than 8x8 are not supported");
  NoGradGuard ng;
  Tensor x = detail::pad_replicate(image_to_tensor(img), net.cfg.pad_factor());
  auto [x_hat, lb] = net.forward_full(x, RunMode::eval);
  (void)x_hat;

  EncodeResult r;
  r.container.width = static_cast<std::uint32_t>(img.width);
  r.container.height = static_cast<std::uint32_t>(img.height);
  r.container.hyper_scheme =
      static_cast<std::uint8_t>(static_cast<int>(net.cfg.hyper_scheme));
  r.container.n = static_cast<std::uint16_t>(net.cfg.n);

  // Symbol ranges carry one guard value on each side so every table keeps a
  // nonzero tail and near-boundary estimates stay finite.
  auto range_of = [](const std::vector<long>& sym) {
    auto [lo, hi] = std::minmax_element(sym.begin(), sym.end());
    return std::pair<long, long>(*lo - 1, *hi + 1);
  };

  auto put_gaussian = [&](StreamId id, const Tensor& q, const GaussianParams& p) {
    std::vector<long> sym = detail::symbols_of(q);
    auto [lo, hi] = range_of(sym);
    std::vector<QuantizedCdf> tables = gaussian_tables(p.mu, p.sigma, lo, hi);
    auto& sd = r.container.streams[static_cast<std::size_t>(id)];
    sd.v_min = static_cast<std::int32_t>(lo);
    sd.v_max = static_cast<std::int32_t>(hi);
    sd.bytes = rc_encode(sym, [&tables](std::size_t i) -> const QuantizedCdf& {
      return tables[i];
    });
    r.estimated_bits[static_cast<std::size_t>(id)] =
        gaussian_stream_bits(sym, p.mu, p.sigma, lo, hi);
  };

  auto put_factorized = [&](StreamId id, const Tensor& q, const FactorizedModel& fm) {
    std::vector<long> sym = detail::symbols_of(q);
    auto [lo, hi] = range_of(sym);
    std::vector<QuantizedCdf> tables = factorized_tables(fm, lo, hi);
    const Shape s = q.shape();
    const std::int64_t plane = s.h * s.w;
    auto& sd = r.container.streams[static_cast<std::size_t>(id)];
    sd.v_min = static_cast<std::int32_t>(lo);
    sd.v_max = static_cast<std::int32_t>(hi);
    sd.bytes = rc_encode(sym, [&](std::size_t i) -> const QuantizedCdf& {
      return tables[static_cast<std::size_t>((static_cast<std::int64_t>(i) / plane) % s.c)];
    });
    r.estimated_bits[static_cast<std::size_t>(id)] =
        factorized_stream_bits(sym, fm, s, lo, hi);
  };

  put_factorized(kStreamZH, lb.z_q.high, net.fm_zh);
  put_factorized(kStreamZL, lb.z_q.low, net.fm_zl);
  put_gaussian(kStreamY1L, lb.y1_q.low, lb.params_y1L);
  put_gaussian(kStreamY1H, lb.y1_q.high, lb.params_y1H);
  put_gaussian(kStreamYL, lb.y_q.low, lb.params_yL);
  put_gaussian(kStreamYH, lb.y_q.high, lb.params_yH);

  r.bytes = serialize(r.container);
  return r;
}

inline DecodeResult decode_image(const CodecNet& net, const ByteStream& bytes,
                                 bool parallel = false) {
  const Container c = parse(bytes);
  if (c.n != net.cfg.n)
    throw std::runtime_error("decode_image: container filter count does not match model");
  if (c.hyper_scheme != static_cast<std::uint8_t>(static_cast<int>(net.cfg.hyper_scheme)))
    throw std::runtime_error("decode_image: container hyper scheme does not match model");
  NoGradGuard ng;

  const std::int64_t factor = net.cfg.pad_factor();
  const std::int64_t ph = (c.height + factor - 1) / factor * factor;
  const std::int64_t pw = (c.width + factor - 1) / factor * factor;
  const LatentDims dims = latent_dims(net.cfg, ph, pw);
  const int workers = parallel ? codec_threads() : 1;

  auto take_factorized = [&](StreamId id, const FactorizedModel& fm, const Shape& sh) {
    const auto& sd = c.streams[static_cast<std::size_t>(id)];
    std::vector<QuantizedCdf> tables = factorized_tables(fm, sd.v_min, sd.v_max);
    const std::int64_t plane = sh.h * sh.w;
    std::vector<long> sym = rc_decode(
        sd.bytes,
        [&](std::size_t i) -> const QuantizedCdf& {
          return tables[static_cast<std::size_t>((static_cast<std::int64_t>(i) / plane) % sh.c)];
        },
        static_cast<std::size_t>(sh.elems()));
    return detail::tensor_from_symbols(sym, sh);
  };

  auto take_gaussian = [&](StreamId id, const GaussianParams& p) {
    const auto& sd = c.streams[static_cast<std::size_t>(id)];
    std::vector<QuantizedCdf> tables =
        gaussian_tables(p.mu, p.sigma, sd.v_min, sd.v_max, workers);
    std::vector<long> sym = rc_decode(
        sd.bytes,
        [&tables](std::size_t i) -> const QuantizedCdf& { return tables[i]; },
        tables.size());
    return detail::tensor_from_symbols(sym, p.mu.shape());
  };

  // The two outermost streams have no coding dependency on each other, so
  // the parallel path decodes them concurrently.
  DualRes z_q;
  if (parallel) {
    auto high = std::async(std::launch::async, take_factorized, kStreamZH,
                           std::cref(net.fm_zh), std::cref(dims.zh));
    z_q.low = take_factorized(kStreamZL, net.fm_zl, dims.zl);
    z_q.high = high.get();
  } else {
    z_q.high = take_factorized(kStreamZH, net.fm_zh, dims.zh);
    z_q.low = take_factorized(kStreamZL, net.fm_zl, dims.zl);
  }

  DualRes phi = net.hyper_synthesis_2(z_q);
  Tensor y1_low = take_gaussian(kStreamY1L, net.y1l_params_from_phi(phi.low));
  Tensor y1_high = take_gaussian(kStreamY1H, net.crpe_e1(phi.high, y1_low));
  DualRes y1_q{y1_high, y1_low};
  DualRes psi = net.hyper_synthesis_1(y1_q);
  Tensor y_low = take_gaussian(kStreamYL, net.crpe_e2(psi.low, y1_low));
  Tensor y_high = take_gaussian(kStreamYH, net.crpe_e3(psi.high, y_low));
  DualRes y_q{y_high, y_low};

  Tensor x_hat = net.synthesis(y_q, RunMode::eval);
  DecodeResult out;
  out.image = tensor_to_image(detail::crop_tl(x_hat, c.height, c.width));
  out.y_q = std::move(y_q);
  out.y1_q = std::move(y1_q);
  out.z_q = std::move(z_q);
  return out;
}

}  // namespace ocmc
