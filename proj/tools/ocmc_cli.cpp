// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: encode/decode with the container format, quality
// metrics, BD-rate between R-D curves, bit-allocation reports, R-D curve
// sweeps, and the staged trainer. Exit code 0 on success; any failure prints
// a one-line diagnostic on stderr and exits nonzero.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ocmc/codec.hpp"
#include "ocmc/metrics.hpp"
#include "ocmc/trainer.hpp"

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> sorted_files(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  return paths;
}

void cmd_encode(const std::string& in, const std::string& model, const std::string& out) {
  ocmc::CodecNet net = ocmc::CodecNet::load(model);
  ocmc::Image8 img = ocmc::load_image(in);
  ocmc::EncodeResult res = ocmc::encode_image(net, img);
  ocmc::detail::write_file(out, res.bytes);
  ocmc::BitAllocation alloc = ocmc::bit_allocation(res.container);
  std::printf("bpp_H=%.6f\n", alloc.bpp_h);
  std::printf("bpp_L=%.6f\n", alloc.bpp_l);
  std::printf("bpp_total=%.6f\n", alloc.bpp_total);
}

void cmd_decode(const std::string& in, const std::string& model, const std::string& out,
                bool parallel) {
  ocmc::CodecNet net = ocmc::CodecNet::load(model);
  ocmc::DecodeResult res = ocmc::decode_image(net, ocmc::detail::read_file(in), parallel);
  ocmc::save_image(out, res.image);
}

void cmd_metrics(const std::string& a_path, const std::string& b_path) {
  ocmc::Image8 a = ocmc::load_image(a_path);
  ocmc::Image8 b = ocmc::load_image(b_path);
  const double p = ocmc::psnr(a, b);
  const double m = ocmc::ms_ssim(a, b);
  std::printf("psnr_db=%.6f\n", p);
  std::printf("msssim=%.8f\n", m);
  std::printf("msssim_db=%.6f\n", ocmc::msssim_db(m));
}

// One R-D curve per CSV file; rows may carry any model labels.
void cmd_bdrate(const std::string& anchor_csv, const std::string& test_csv,
                const std::string& quality) {
  auto load_curve = [&](const std::string& path, std::vector<double>& rate,
                        std::vector<double>& qual) {
    for (const ocmc::RdRow& r : ocmc::parse_rd_csv(read_text(path))) {
      rate.push_back(r.p.bpp);
      qual.push_back(quality == "msssim_db" ? r.p.msssim_db : r.p.psnr);
    }
  };
  std::vector<double> ar, aq, tr, tq;
  load_curve(anchor_csv, ar, aq);
  load_curve(test_csv, tr, tq);
  std::printf("bd_rate_percent=%.4f\n", ocmc::bd_rate(ar, aq, tr, tq));
}

void cmd_report(const std::string& in) {
  ocmc::Container c = ocmc::parse(ocmc::detail::read_file(in));
  ocmc::BitAllocation alloc = ocmc::bit_allocation(c);
  std::printf("width=%u\n", c.width);
  std::printf("height=%u\n", c.height);
  std::printf("bpp_total=%.6f\n", alloc.bpp_total);
  std::printf("bpp_L=%.6f\n", alloc.bpp_l);
  std::printf("bpp_H=%.6f\n", alloc.bpp_h);
  std::printf("allocation=%s\n", alloc.ratio.c_str());
}

void cmd_rdcurve(const std::string& dir, const std::vector<std::string>& models,
                 const std::string& out) {
  std::vector<ocmc::RdRow> rows;
  for (const std::string& ckpt : models) {
    ocmc::CodecNet net = ocmc::CodecNet::load(ckpt);
    double bpp = 0, p = 0, m = 0, mdb = 0;
    int count = 0;
    for (const std::string& path : sorted_files(dir)) {
      ocmc::Image8 img;
      try {
        img = ocmc::load_image(path);
      } catch (const std::exception&) {
        continue;  // not an image; skip
      }
      ocmc::EncodeResult res = ocmc::encode_image(net, img);
      ocmc::Image8 rec = ocmc::decode_image(net, res.bytes).image;
      bpp += ocmc::bit_allocation(res.container).bpp_total;
      p += ocmc::psnr(img, rec);
      const double ms = ocmc::ms_ssim(img, rec);
      m += ms;
      mdb += ocmc::msssim_db(ms);
      ++count;
    }
    if (count == 0) throw std::runtime_error("no decodable images in " + dir);
    const double n = static_cast<double>(count);
    ocmc::RdRow row;
    row.model = std::filesystem::path(ckpt).stem().string();
    row.p = {bpp / n, p / n, m / n, mdb / n};
    rows.push_back(row);
  }
  write_text(out, ocmc::rd_csv(rows));
  std::printf("wrote %zu curve rows to %s\n", rows.size(), out.c_str());
}

void cmd_train(const std::string& config_path, int stage_override) {
  ocmc::RunConfig rc = ocmc::parse_run_config(read_text(config_path));
  if (stage_override != 0) rc.train.stage = stage_override;
  if (rc.out_checkpoint.empty()) throw std::runtime_error("config must set out_checkpoint");
  if (rc.data_dir.empty()) throw std::runtime_error("config must set data_dir");
  if (rc.train.stage > 1 && rc.in_checkpoint.empty())
    throw std::runtime_error("stage " + std::to_string(rc.train.stage) +
                             " needs in_checkpoint from the previous stage");
  ocmc::CodecNet net = rc.in_checkpoint.empty()
                           ? ocmc::CodecNet::init(rc.model, rc.train.seed)
                           : ocmc::CodecNet::load(rc.in_checkpoint);
  std::vector<ocmc::Tensor> patches =
      ocmc::ingest_patches(rc.data_dir, rc.train.patch, rc.patch_count, rc.train.seed);
  std::vector<ocmc::TrainLogRow> log = ocmc::train_stage(net, patches, rc.train);
  net.save(rc.out_checkpoint);
  if (!rc.log_csv.empty()) write_text(rc.log_csv, ocmc::train_log_csv(log));
  std::printf("stage %d complete: %lld iterations, final loss %.6f, checkpoint %s\n",
              rc.train.stage, static_cast<long long>(log.size()), log.back().loss,
              rc.out_checkpoint.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-resolution learned image codec"};
  app.require_subcommand(1);

  std::string in, out, model, quality = "psnr", anchor_csv, test_csv, config_path;
  std::vector<std::string> models;
  bool parallel = false;
  int stage_override = 0;

  CLI::App* enc = app.add_subcommand("encode", "compress an image to a container file");
  enc->add_option("input", in, "PNG or binary PPM image")->required();
  enc->add_option("--model", model, "checkpoint file")->required();
  enc->add_option("-o,--output", out, "container file to write")->required();

  CLI::App* dec = app.add_subcommand("decode", "reconstruct an image from a container file");
  dec->add_option("input", in, "container file")->required();
  dec->add_option("--model", model, "checkpoint file")->required();
  dec->add_option("-o,--output", out, "image file to write")->required();
  dec->add_flag("--parallel", parallel, "decode hyper streams concurrently");

  CLI::App* met = app.add_subcommand("metrics", "quality metrics between two images");
  met->add_option("a", anchor_csv, "reference image")->required();
  met->add_option("b", test_csv, "test image")->required();

  CLI::App* bdr = app.add_subcommand("bdrate", "BD-rate of a test curve against an anchor");
  bdr->add_option("anchor", anchor_csv, "anchor R-D curve CSV")->required();
  bdr->add_option("test", test_csv, "test R-D curve CSV")->required();
  bdr->add_option("--quality", quality, "quality column: psnr or msssim_db")
      ->check(CLI::IsMember({"psnr", "msssim_db"}));

  CLI::App* rep = app.add_subcommand("report", "bit-allocation report for a container file");
  rep->add_option("input", in, "container file")->required();

  CLI::App* rdc = app.add_subcommand("rdcurve", "R-D curve CSV over an image directory");
  rdc->add_option("dir", in, "directory of images")->required();
  rdc->add_option("--models", models, "checkpoint files, comma separated")
      ->required()
      ->delimiter(',');
  rdc->add_option("-o,--output", out, "CSV file to write")->required();

  CLI::App* trn = app.add_subcommand("train", "run one training stage from a config file");
  trn->add_option("--config", config_path, "key=value run configuration")->required();
  trn->add_option("--stage", stage_override, "override the config's stage")
      ->check(CLI::Range(1, 3));

  try {
    app.parse(argc, argv);
    if (enc->parsed()) cmd_encode(in, model, out);
    else if (dec->parsed()) cmd_decode(in, model, out, parallel);
    else if (met->parsed()) cmd_metrics(anchor_csv, test_csv);
    else if (bdr->parsed()) cmd_bdrate(anchor_csv, test_csv, quality);
    else if (rep->parsed()) cmd_report(in);
    else if (rdc->parsed()) cmd_rdcurve(in, models, out);
    else if (trn->parsed()) cmd_train(config_path, stage_override);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
