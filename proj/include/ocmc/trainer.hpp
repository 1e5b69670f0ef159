// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Losses and the three-stage training schedule. Stage 1 trains the core
// transform pair on distortion alone; stage 2 attaches the first hyper
// layer with interim factorized priors over its latents; stage 3 attaches
// the outer hyper layer, the cross-resolution estimators, and the fidelity
// probes, and optimizes rate, distortion, and the information-fidelity term
// end to end. A checkpoint records the highest completed stage so later
// stages refuse to start from an unprepared model.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocmc/codec.hpp"
#include "ocmc/metrics.hpp"
#include "ocmc/model.hpp"

namespace ocmc {

struct TrainConfig {
  int stage = 1;
  std::int64_t iterations = 100;
  std::int64_t batch = 1;
  std::int64_t patch = 128;
  double lr = 1e-4;
  std::uint64_t seed = 1;

  void validate(const ModelConfig& model) const {
    if (stage < 1 || stage > 3) throw std::invalid_argument("TrainConfig: stage must be 1..3");
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (lr <= 0) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
    // Stage 1 runs only the core transforms (one sixteenth resolution with
    // dual branches); later stages run the full chain and need full padding.
    const std::int64_t factor = stage == 1 ? 32 : model.pad_factor();
    if (patch < factor || patch % factor != 0)
      throw std::invalid_argument("TrainConfig: patch size must be a positive multiple of " +
                                  std::to_string(factor));
  }
};

// ---- losses --------------------------------------------------------------

// Largest scale count the input supports, capped at the standard five.
inline int msssim_scales_for(const Shape& s) {
  int scales = 0;
  std::int64_t h = s.h, w = s.w;
  while (scales < 5 && h >= 11 && w >= 11) {
    ++scales;
    h /= 2;
    w /= 2;
  }
  if (scales == 0) throw std::invalid_argument("msssim_scales_for: input below one window");
  return scales;
}

// Distortion in display units: squared error on the 0..255 scale, or one
// minus multi-scale structural similarity.
inline Tensor distortion(const Tensor& x, const Tensor& x_hat, Metric metric) {
  if (metric == Metric::mse)
    return mul_scalar(mean_all(square(sub(x_hat, x))), 127.5 * 127.5);
  Tensor one = Tensor::from({1, 1, 1, 1}, {1.0});
  return sub(one, ms_ssim_t(x, x_hat, msssim_scales_for(x.shape())));
}

// Per-iteration rate estimates split by branch, as tape scalars in bits.
struct RateSplit {
  Tensor bits_h, bits_l;

  static RateSplit zero() {
    return {Tensor::from({1, 1, 1, 1}, {0.0}), Tensor::from({1, 1, 1, 1}, {0.0})};
  }
};

inline Tensor loss_rd(const Tensor& x, const Tensor& x_hat, const RateSplit& rate,
                      double lambda, Metric metric) {
  const Shape s = x.shape();
  const double px = static_cast<double>(s.n * s.h * s.w);
  Tensor bpp = mul_scalar(add(rate.bits_h, rate.bits_l), 1.0 / px);
  return add(bpp, mul_scalar(distortion(x, x_hat, metric), lambda));
}

// Information-fidelity term: how well a single linear probe predicts each
// clean low-resolution latent from itself. Skipping zero-weighted terms
// keeps loss_total bit-identical to loss_rd when the term is disabled.
inline Tensor loss_if(const Tensor& y_low, const Tensor& y1_low, const FidelityProbe& probe,
                      double lambda1, double lambda2) {
  Tensor out = Tensor::from({1, 1, 1, 1}, {0.0});
  if (lambda1 > 0)
    out = add(out, mul_scalar(mean_all(square(sub(probe.apply_theta(y_low), y_low))), lambda1));
  if (lambda2 > 0)
    out = add(out, mul_scalar(mean_all(square(sub(probe.apply_omega(y1_low), y1_low))), lambda2));
  return out;
}

inline Tensor loss_total(const Tensor& rd, const Tensor& fidelity) {
  return add(rd, fidelity);
}

// ---- data ingestion ------------------------------------------------------

// Deterministic random patch set from a directory of images: uniform crop
// positions with dihedral augmentation (quarter rotations and mirroring).
// Returns (1,3,patch,patch) tensors in [-1,1].
inline std::vector<Tensor> ingest_patches(const std::string& dir, std::int64_t patch,
                                          std::int64_t count, std::uint64_t seed) {
  if (patch < 1) throw std::invalid_argument("ingest_patches: patch must be >= 1");
  std::vector<std::string> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());

  std::vector<Image8> images;
  for (const auto& p : paths) {
    Image8 img = load_image(p);
    if (img.width >= patch && img.height >= patch) images.push_back(std::move(img));
  }
  if (images.empty())
    throw std::runtime_error("ingest_patches: no image in " + dir + " fits a " +
                             std::to_string(patch) + "px patch");

  Rng rng(seed);
  auto pick = [&](std::int64_t n) {
    return static_cast<std::int64_t>(rng.uniform() * static_cast<double>(n)) % n;
  };
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const Image8& src = images[static_cast<std::size_t>(pick(
        static_cast<std::int64_t>(images.size())))];
    const std::int64_t x0 = pick(src.width - patch + 1);
    const std::int64_t y0 = pick(src.height - patch + 1);
    const std::int64_t rot = pick(4);
    const bool mirror = pick(2) == 1;
    Image8 crop;
    crop.width = patch;
    crop.height = patch;
    crop.rgb.resize(static_cast<std::size_t>(patch * patch * 3));
    for (std::int64_t y = 0; y < patch; ++y)
      for (std::int64_t x = 0; x < patch; ++x) {
        std::int64_t u = x, v = y;
        if (mirror) u = patch - 1 - u;
        for (std::int64_t r = 0; r < rot; ++r) {
          const std::int64_t t = u;
          u = v;
          v = patch - 1 - t;
        }
        for (int ch = 0; ch < 3; ++ch)
          crop.at(x, y, ch) = src.at(x0 + u, y0 + v, ch);
      }
    out.push_back(image_to_tensor(crop));
  }
  return out;
}

// ---- the training loop ---------------------------------------------------

struct TrainLogRow {
  std::int64_t iteration = 0;  // 1-based
  double loss = 0.0;
  double bpp_h = 0.0;
  double bpp_l = 0.0;
  double distortion = 0.0;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "iteration,loss,bpp_H,bpp_L,distortion\n";
  char buf[192];
  for (const TrainLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.8f,%.8f,%.8f,%.8f\n",
                  static_cast<long long>(r.iteration), r.loss, r.bpp_h, r.bpp_l, r.distortion);
    out += buf;
  }
  return out;
}

inline std::vector<TrainLogRow> parse_train_log_csv(const std::string& text) {
  std::vector<TrainLogRow> rows;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    if (first && line.rfind("iteration,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    TrainLogRow r;
    long long it = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf", &it, &r.loss, &r.bpp_h, &r.bpp_l,
                    &r.distortion) != 5)
      throw std::runtime_error("train log: bad row: " + line);
    r.iteration = it;
    rows.push_back(r);
  }
  return rows;
}

namespace detail {

inline Tensor stack_batch(const std::vector<Tensor>& patches,
                          const std::vector<std::size_t>& idx) {
  const Shape s = patches[idx[0]].shape();
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(idx.size()), s.c, s.h, s.w});
  const std::size_t stride = static_cast<std::size_t>(s.elems());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& v = patches[idx[b]].values();
    std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(b * stride));
  }
  return out;
}

}  // namespace detail

// One optimization stage over an in-memory patch set. The model is updated
// in place and its trained_stage marker advanced; the caller persists it.
inline std::vector<TrainLogRow> train_stage(CodecNet& net, const std::vector<Tensor>& patches,
                                            const TrainConfig& tc) {
  tc.validate(net.cfg);
  if (patches.empty()) throw std::invalid_argument("train_stage: no patches");
  for (const Tensor& p : patches) {
    const Shape s = p.shape();
    if (s.n != 1 || s.c != 3 || s.h != tc.patch || s.w != tc.patch)
      throw std::invalid_argument("train_stage: patch shape mismatch");
  }
  if (net.trained_stage < tc.stage - 1)
    throw std::invalid_argument("train_stage: stage " + std::to_string(tc.stage) +
                                " requires a stage " + std::to_string(tc.stage - 1) +
                                " checkpoint");

  Adam opt(net.trainables(tc.stage), tc.lr);
  Rng rng(tc.seed);
  const double lambda = net.cfg.lambda;
  const Metric metric = net.cfg.metric;
  std::vector<TrainLogRow> log;
  log.reserve(static_cast<std::size_t>(tc.iterations));

  for (std::int64_t iter = 1; iter <= tc.iterations; ++iter) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(tc.batch));
    for (auto& i : idx)
      i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(patches.size())) %
          patches.size();
    Tensor x = detail::stack_batch(patches, idx);

    const Shape bs = x.shape();
    const double px = static_cast<double>(bs.n * bs.h * bs.w);
    Tensor loss;
    RateSplit rate = RateSplit::zero();
    Tensor dist;
    if (tc.stage == 1) {
      DualRes y = net.analysis(x);
      DualRes y_q = quantize(y, RunMode::train, &rng);
      Tensor x_hat = net.synthesis(y_q, RunMode::train);
      dist = distortion(x, x_hat, metric);
      loss = mul_scalar(dist, lambda);
    } else if (tc.stage == 2) {
      DualRes y = net.analysis(x);
      DualRes y_q = quantize(y, RunMode::train, &rng);
      DualRes y1 = net.hyper_analysis_1(y_q);
      DualRes y1_q = quantize(y1, RunMode::train, &rng);
      rate.bits_h = estimate_rate(y1_q.high, net.fm_y1h);
      rate.bits_l = estimate_rate(y1_q.low, net.fm_y1l);
      Tensor x_hat = net.synthesis(y_q, RunMode::train);
      dist = distortion(x, x_hat, metric);
      Tensor bpp = mul_scalar(add(rate.bits_h, rate.bits_l), 1.0 / px);
      loss = add(bpp, mul_scalar(dist, lambda));
    } else {
      auto [x_hat, lb] = net.forward_full(x, RunMode::train, &rng);
      rate.bits_h = add(add(estimate_rate(lb.y_q.high, lb.params_yH.mu, lb.params_yH.sigma),
                            estimate_rate(lb.y1_q.high, lb.params_y1H.mu, lb.params_y1H.sigma)),
                        estimate_rate(lb.z_q.high, net.fm_zh));
      rate.bits_l = add(add(estimate_rate(lb.y_q.low, lb.params_yL.mu, lb.params_yL.sigma),
                            estimate_rate(lb.y1_q.low, lb.params_y1L.mu, lb.params_y1L.sigma)),
                        estimate_rate(lb.z_q.low, net.fm_zl));
      dist = distortion(x, x_hat, metric);
      Tensor bpp = mul_scalar(add(rate.bits_h, rate.bits_l), 1.0 / px);
      Tensor rd = add(bpp, mul_scalar(dist, lambda));
      loss = loss_total(rd, loss_if(lb.y.low, lb.y1.low, net.probe, net.cfg.lambda1,
                                    net.cfg.lambda2));
    }

    loss.backward();
    opt.step();
    opt.zero_grad();
    net.reproject();

    TrainLogRow row;
    row.iteration = iter;
    row.loss = loss.values()[0];
    row.bpp_h = rate.bits_h.values()[0] / px;
    row.bpp_l = rate.bits_l.values()[0] / px;
    row.distortion = dist.values()[0];
    log.push_back(row);
  }
  net.trained_stage = std::max(net.trained_stage, tc.stage);
  return log;
}

// ---- key=value config files ---------------------------------------------

// Full training run description: model hyperparameters plus loop settings
// and file paths, parsed from "key = value" lines with '#' comments.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string in_checkpoint;   // previous-stage model; empty = fresh (stage 1 only)
  std::string out_checkpoint;  // written after the stage finishes
  std::string log_csv;         // per-iteration training log
  std::int64_t patch_count = 64;
};

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    auto num = [&] { return std::stod(val); };
    if (key == "n") rc.model.n = static_cast<std::int64_t>(num());
    else if (key == "lambda") rc.model.lambda = num();
    else if (key == "lambda1") rc.model.lambda1 = num();
    else if (key == "lambda2") rc.model.lambda2 = num();
    else if (key == "hyper_scheme") {
      const int s = static_cast<int>(num());
      if (s != 1 && s != 2)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": hyper_scheme must be 1 or 2");
      rc.model.hyper_scheme = static_cast<HyperScheme>(s);
    }
    else if (key == "metric") rc.model.metric = val == "msssim" ? Metric::msssim : Metric::mse;
    else if (key == "leaky_slope") rc.model.leaky_slope = num();
    else if (key == "stage") rc.train.stage = static_cast<int>(num());
    else if (key == "iterations") rc.train.iterations = static_cast<std::int64_t>(num());
    else if (key == "batch") rc.train.batch = static_cast<std::int64_t>(num());
    else if (key == "patch") rc.train.patch = static_cast<std::int64_t>(num());
    else if (key == "lr") rc.train.lr = num();
    else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(num());
    else if (key == "data_dir") rc.data_dir = val;
    else if (key == "in_checkpoint") rc.in_checkpoint = val;
    else if (key == "out_checkpoint") rc.out_checkpoint = val;
    else if (key == "log_csv") rc.log_csv = val;
    else if (key == "patch_count") rc.patch_count = static_cast<std::int64_t>(num());
    else
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" +
                               key + "'");
  }
  return rc;
}

}  // namespace ocmc
