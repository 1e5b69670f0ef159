// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Image quality metrics and rate reporting: PSNR, multi-scale structural
// similarity (plus a differentiable variant for training), Bjontegaard
// delta-rate between R-D curves, bit-allocation summaries, and the R-D CSV
// format shared by the curve and delta-rate tools.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocmc/container.hpp"
#include "ocmc/image.hpp"
#include "ocmc/tensor.hpp"

namespace ocmc {

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

inline double psnr(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: image sizes differ");
  if (a.rgb.empty()) throw std::invalid_argument("psnr: empty image");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace detail {

// 11x11 Gaussian, sigma 1.5, normalized to sum 1.
inline const std::array<double, 121>& ssim_window() {
  static const std::array<double, 121> w = [] {
    std::array<double, 11> g{};
    for (int i = 0; i < 11; ++i)
      g[static_cast<std::size_t>(i)] =
          std::exp(-((i - 5.0) * (i - 5.0)) / (2.0 * 1.5 * 1.5));
    std::array<double, 121> out{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        out[static_cast<std::size_t>(i * 11 + j)] =
            g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
        sum += out[static_cast<std::size_t>(i * 11 + j)];
      }
    for (double& v : out) v /= sum;
    return out;
  }();
  return w;
}

struct Plane {
  std::int64_t h = 0, w = 0;
  std::vector<double> v;
  double& at(std::int64_t y, std::int64_t x) { return v[static_cast<std::size_t>(y * w + x)]; }
  double at(std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>(y * w + x)];
  }
};

inline Plane plane_of(const Image8& img, int ch) {
  Plane p;
  p.h = img.height;
  p.w = img.width;
  p.v.resize(static_cast<std::size_t>(p.h * p.w));
  for (std::int64_t y = 0; y < p.h; ++y)
    for (std::int64_t x = 0; x < p.w; ++x)
      p.at(y, x) = static_cast<double>(img.at(x, y, ch));
  return p;
}

inline Plane conv_valid_11(const Plane& p) {
  const auto& w = ssim_window();
  Plane out;
  out.h = p.h - 10;
  out.w = p.w - 10;
  out.v.assign(static_cast<std::size_t>(out.h * out.w), 0.0);
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double wk = w[static_cast<std::size_t>(i * 11 + j)];
      for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t x = 0; x < out.w; ++x)
          out.at(y, x) += wk * p.at(y + i, x + j);
    }
  return out;
}

inline Plane mul_planes(const Plane& a, const Plane& b) {
  Plane out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

inline Plane down2(const Plane& p) {
  Plane out;
  out.h = p.h / 2;
  out.w = p.w / 2;
  out.v.resize(static_cast<std::size_t>(out.h * out.w));
  for (std::int64_t y = 0; y < out.h; ++y)
    for (std::int64_t x = 0; x < out.w; ++x)
      out.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y + 1, 2 * x) +
                             p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Mean luminance-contrast-structure terms over one scale.
inline void ssim_terms(const Plane& p1, const Plane& p2, double& mean_ssim, double& mean_cs) {
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  Plane mu1 = conv_valid_11(p1);
  Plane mu2 = conv_valid_11(p2);
  Plane e11 = conv_valid_11(mul_planes(p1, p1));
  Plane e22 = conv_valid_11(mul_planes(p2, p2));
  Plane e12 = conv_valid_11(mul_planes(p1, p2));
  double acc_ssim = 0.0, acc_cs = 0.0;
  for (std::size_t i = 0; i < mu1.v.size(); ++i) {
    const double m1 = mu1.v[i], m2 = mu2.v[i];
    const double s11 = e11.v[i] - m1 * m1;
    const double s22 = e22.v[i] - m2 * m2;
    const double s12 = e12.v[i] - m1 * m2;
    const double cs = (2.0 * s12 + c2) / (s11 + s22 + c2);
    acc_cs += cs;
    acc_ssim += ((2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)) * cs;
  }
  mean_ssim = acc_ssim / static_cast<double>(mu1.v.size());
  mean_cs = acc_cs / static_cast<double>(mu1.v.size());
}

}  // namespace detail

// Five-scale MS-SSIM on 0..255 planes, channel mean last. Needs every scale
// to fit the 11x11 window, i.e. min(width, height) >= 176.
inline double ms_ssim(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ms_ssim: image sizes differ");
  {
    std::int64_t h = a.height, w = a.width;
    for (int s = 0; s < 5; ++s) {
      if (h < 11 || w < 11)
        throw std::invalid_argument("ms_ssim: image too small for 5 scales (min dim 176)");
      h /= 2;
      w /= 2;
    }
  }
  double channel_sum = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    detail::Plane p1 = detail::plane_of(a, ch);
    detail::Plane p2 = detail::plane_of(b, ch);
    double acc = 1.0;
    for (int s = 0; s < 5; ++s) {
      double mean_ssim = 0.0, mean_cs = 0.0;
      detail::ssim_terms(p1, p2, mean_ssim, mean_cs);
      if (s < 4) {
        acc *= std::pow(std::max(mean_cs, 0.0), kMsSsimWeights[s]);
        p1 = detail::down2(p1);
        p2 = detail::down2(p2);
      } else {
        acc *= std::pow(std::max(mean_ssim, 0.0), kMsSsimWeights[s]);
      }
    }
    channel_sum += acc;
  }
  return channel_sum / 3.0;
}

inline double msssim_db(double m) {
  if (m >= 1.0) return 100.0;
  return std::min(100.0, -10.0 * std::log10(1.0 - m));
}

// ---- differentiable variant for training --------------------------------

namespace detail {

inline Tensor ssim_kernel(std::int64_t channels) {
  const auto& w = ssim_window();
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(channels) * 121);
  for (std::int64_t c = 0; c < channels; ++c)
    vals.insert(vals.end(), w.begin(), w.end());
  return Tensor::from({channels, 1, 11, 11}, vals);
}

inline Tensor pool_kernel(std::int64_t channels) {
  return Tensor::from({channels, 1, 2, 2},
                      std::vector<double>(static_cast<std::size_t>(channels) * 4, 0.25));
}

inline Tensor safe_pow(const Tensor& x, double p) {
  return exp_t(mul_scalar(log_t(clamp_t(x, 1e-12, 1e12)), p));
}

}  // namespace detail

// Tape-recorded MS-SSIM between two (1,C,H,W) tensors in model scale
// [-1, 1]. Small training crops cannot fit five window scales, so the
// scale count is a parameter; the standard weights are truncated and
// renormalized. Per-scale terms are averaged over channels jointly, which
// matches the per-channel evaluation metric exactly when the channel maps
// share one scale factor and stays within regular training noise otherwise.
inline Tensor ms_ssim_t(const Tensor& x, const Tensor& y, int scales = 3) {
  const Shape s = x.shape();
  if (!(s == y.shape())) throw std::invalid_argument("ms_ssim_t: shape mismatch");
  if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim_t: scales must be 1..5");
  {
    std::int64_t h = s.h, w = s.w;
    for (int i = 0; i < scales; ++i) {
      if (h < 11 || w < 11) throw std::invalid_argument("ms_ssim_t: input too small");
      h /= 2;
      w /= 2;
    }
  }
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double wsum = 0.0;
  for (int i = 0; i < scales; ++i) wsum += kMsSsimWeights[i];
  Tensor win = detail::ssim_kernel(s.c);
  Tensor pool = detail::pool_kernel(s.c);

  Tensor p1 = mul_scalar(add_scalar(x, 1.0), 127.5);
  Tensor p2 = mul_scalar(add_scalar(y, 1.0), 127.5);
  Tensor acc = Tensor::from({1, 1, 1, 1}, {1.0});
  for (int sc = 0; sc < scales; ++sc) {
    Tensor mu1 = conv2d(p1, win, Tensor{}, 1, 0, s.c);
    Tensor mu2 = conv2d(p2, win, Tensor{}, 1, 0, s.c);
    Tensor s11 = sub(conv2d(mul(p1, p1), win, Tensor{}, 1, 0, s.c), mul(mu1, mu1));
    Tensor s22 = sub(conv2d(mul(p2, p2), win, Tensor{}, 1, 0, s.c), mul(mu2, mu2));
    Tensor s12 = sub(conv2d(mul(p1, p2), win, Tensor{}, 1, 0, s.c), mul(mu1, mu2));
    Tensor cs = div(add_scalar(mul_scalar(s12, 2.0), c2),
                    add_scalar(add(s11, s22), c2));
    const double w = kMsSsimWeights[sc] / wsum;
    if (sc < scales - 1) {
      acc = mul(acc, detail::safe_pow(mean_all(cs), w));
      p1 = conv2d(p1, pool, Tensor{}, 2, 0, s.c);
      p2 = conv2d(p2, pool, Tensor{}, 2, 0, s.c);
    } else {
      Tensor lum = div(add_scalar(mul_scalar(mul(mu1, mu2), 2.0), c1),
                       add_scalar(add(mul(mu1, mu1), mul(mu2, mu2)), c1));
      acc = mul(acc, detail::safe_pow(mean_all(mul(lum, cs)), w));
    }
  }
  return acc;
}

// ---- Bjontegaard delta rate ---------------------------------------------

namespace detail {

// Least-squares polynomial fit of y over centered x, degree min(3, n-1).
struct PolyFit {
  double center = 0.0;
  std::vector<double> coef;  // coef[k] * (x - center)^k

  double integral(double lo, double hi) const {
    double s = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k) {
      const double e = static_cast<double>(k) + 1.0;
      s += coef[k] / e * (std::pow(hi - center, e) - std::pow(lo - center, e));
    }
    return s;
  }
};

inline PolyFit polyfit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  const std::size_t deg = std::min<std::size_t>(3, n - 1);
  PolyFit f;
  for (double v : x) f.center += v;
  f.center /= static_cast<double>(n);

  const std::size_t m = deg + 1;
  std::vector<double> a(m * m, 0.0), b(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i] - f.center;
    std::vector<double> pw(2 * m - 1, 1.0);
    for (std::size_t k = 1; k < pw.size(); ++k) pw[k] = pw[k - 1] * u;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) a[r * m + c] += pw[r + c];
      b[r] += pw[r] * y[i];
    }
  }
  // Gaussian elimination with partial pivoting.
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::abs(a[r * m + col]) > std::abs(a[piv * m + col])) piv = r;
    if (std::abs(a[piv * m + col]) < 1e-12)
      throw std::invalid_argument("bd_rate: degenerate quality values");
    if (piv != col) {
      for (std::size_t c = 0; c < m; ++c) std::swap(a[piv * m + c], a[col * m + c]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double t = a[r * m + col] / a[col * m + col];
      for (std::size_t c = col; c < m; ++c) a[r * m + c] -= t * a[col * m + c];
      b[r] -= t * b[col];
    }
  }
  f.coef.assign(m, 0.0);
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < m; ++c) s -= a[r * m + c] * f.coef[c];
    f.coef[r] = s / a[r * m + r];
  }
  return f;
}

}  // namespace detail

// Average rate difference of the test curve against the anchor at equal
// quality, in percent; negative means the test codec saves bits. Cubic
// interpolation of log-rate against quality over the shared quality span.
inline double bd_rate(const std::vector<double>& anchor_rate,
                      const std::vector<double>& anchor_quality,
                      const std::vector<double>& test_rate,
                      const std::vector<double>& test_quality) {
  if (anchor_rate.size() != anchor_quality.size() || test_rate.size() != test_quality.size())
    throw std::invalid_argument("bd_rate: mismatched rate/quality lengths");
  if (anchor_rate.size() < 2 || test_rate.size() < 2)
    throw std::invalid_argument("bd_rate: need at least two points per curve");
  for (double r : anchor_rate)
    if (!(r > 0)) throw std::invalid_argument("bd_rate: rates must be positive");
  for (double r : test_rate)
    if (!(r > 0)) throw std::invalid_argument("bd_rate: rates must be positive");

  auto logs = [](const std::vector<double>& r) {
    std::vector<double> out(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = std::log10(r[i]);
    return out;
  };
  detail::PolyFit fa = detail::polyfit(anchor_quality, logs(anchor_rate));
  detail::PolyFit ft = detail::polyfit(test_quality, logs(test_rate));

  const double lo = std::max(*std::min_element(anchor_quality.begin(), anchor_quality.end()),
                             *std::min_element(test_quality.begin(), test_quality.end()));
  const double hi = std::min(*std::max_element(anchor_quality.begin(), anchor_quality.end()),
                             *std::max_element(test_quality.begin(), test_quality.end()));
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: quality ranges do not overlap");
  const double avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

// ---- rate reports --------------------------------------------------------

struct BitAllocation {
  double bpp_total = 0.0;  // whole file including the header
  double bpp_l = 0.0;      // payload bits of the low-resolution streams
  double bpp_h = 0.0;      // payload bits of the high-resolution streams
  std::string ratio;       // "1:r" with r = bpp_h / bpp_l
};

inline std::string allocation_ratio(double bpp_l, double bpp_h) {
  if (!(bpp_l > 0)) throw std::invalid_argument("allocation_ratio: low bpp must be positive");
  char buf[48];
  std::snprintf(buf, sizeof(buf), "1:%.4f", bpp_h / bpp_l);
  return buf;
}

inline BitAllocation bit_allocation(const Container& c) {
  const double px = static_cast<double>(c.width) * static_cast<double>(c.height);
  if (!(px > 0)) throw std::invalid_argument("bit_allocation: empty image");
  auto bits = [&](StreamId id) {
    return 8.0 * static_cast<double>(c.streams[static_cast<std::size_t>(id)].bytes.size());
  };
  BitAllocation a;
  a.bpp_l = (bits(kStreamZL) + bits(kStreamY1L) + bits(kStreamYL)) / px;
  a.bpp_h = (bits(kStreamZH) + bits(kStreamY1H) + bits(kStreamYH)) / px;
  a.bpp_total =
      8.0 * static_cast<double>(Container::kHeaderSize + c.payload_bytes()) / px;
  a.ratio = allocation_ratio(a.bpp_l, a.bpp_h);
  return a;
}

struct RdPoint {
  double bpp = 0.0;
  double psnr = 0.0;
  double msssim = 0.0;
  double msssim_db = 0.0;
};

struct RdRow {
  std::string model;
  RdPoint p;
};

inline std::string rd_csv(std::vector<RdRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const RdRow& a, const RdRow& b) { return a.p.bpp < b.p.bpp; });
  std::string out = "model,bpp,psnr,msssim,msssim_db\n";
  char buf[256];
  for (const RdRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.8f,%.8f,%.8f,%.8f\n", r.model.c_str(), r.p.bpp,
                  r.p.psnr, r.p.msssim, r.p.msssim_db);
    out += buf;
  }
  return out;
}

inline std::vector<RdRow> parse_rd_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RdRow> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("model,", 0) == 0) continue;  // header row
    }
    std::istringstream ls(line);
    RdRow r;
    std::string field;
    if (!std::getline(ls, r.model, ',')) throw std::runtime_error("rd csv: bad row: " + line);
    double* slots[4] = {&r.p.bpp, &r.p.psnr, &r.p.msssim, &r.p.msssim_db};
    for (double* slot : slots) {
      if (!std::getline(ls, field, ','))
        throw std::runtime_error("rd csv: bad row: " + line);
      std::size_t used = 0;
      *slot = std::stod(field, &used);
      if (used == 0) throw std::runtime_error("rd csv: bad number: " + field);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ocmc
