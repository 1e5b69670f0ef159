// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <png.h>

#include <cstdio>

#include "ocmc/image.hpp"
#include "synthetic.hpp"

using namespace ocmc;
using testutil::synth_base;

namespace {

// Writes a PNG with an arbitrary colour type so the reader's
// normalization chain (palette/gray/alpha/16-bit -> RGB8) is exercised.
std::vector<std::uint8_t> write_png_as(int color_type, int bit_depth,
                                       const Image8& rgb) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> scratch;
  std::vector<png_bytep> rows(static_cast<std::size_t>(rgb.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("test png writer failed");
  }
  png_set_write_fn(png, &out, ocmc::detail::png_mem_write, ocmc::detail::png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(rgb.width),
               static_cast<png_uint_32>(rgb.height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::int64_t W = rgb.width, H = rgb.height;
  if (color_type == PNG_COLOR_TYPE_GRAY) {
    scratch.resize(static_cast<std::size_t>(W * H));
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        scratch[static_cast<std::size_t>(y * W + x)] = rgb.at(x, y, 0);
    for (std::int64_t y = 0; y < H; ++y)
      rows[static_cast<std::size_t>(y)] = scratch.data() + y * W;
  } else if (color_type == PNG_COLOR_TYPE_RGBA) {
    scratch.resize(static_cast<std::size_t>(W * H * 4));
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c)
          scratch[static_cast<std::size_t>((y * W + x) * 4 + c)] = rgb.at(x, y, c);
        scratch[static_cast<std::size_t>((y * W + x) * 4 + 3)] = 255;
      }
    for (std::int64_t y = 0; y < H; ++y)
      rows[static_cast<std::size_t>(y)] = scratch.data() + y * W * 4;
  } else {
    throw std::runtime_error("unsupported test colour type");
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

TEST(ImageIo, PpmRoundTrip) {
  const char* path = "/tmp/ocmc_img_rt.ppm";
  Image8 img = synth_base();
  save_image(path, img);
  Image8 back = load_image(path);
  EXPECT_EQ(back.width, img.width);
  EXPECT_EQ(back.height, img.height);
  EXPECT_EQ(back.rgb, img.rgb);
  std::remove(path);
}

TEST(ImageIo, PngRoundTrip) {
  const char* path = "/tmp/ocmc_img_rt.png";
  Image8 img = synth_base();
  save_image(path, img);
  Image8 back = load_image(path);
  EXPECT_EQ(back.rgb, img.rgb);
  std::remove(path);
}

TEST(ImageIo, PpmCommentsAndWhitespace) {
  std::vector<std::uint8_t> bytes;
  const std::string header = "P6 # binary rgb\n# a comment line\n 2 \n#\n2\n255\n";
  bytes.assign(header.begin(), header.end());
  for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<std::uint8_t>(i * 20));
  Image8 img = ocmc::detail::decode_ppm(bytes);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.at(1, 1, 2), 220);
}

TEST(ImageIo, PpmErrors) {
  auto from = [](const std::string& s) {
    return std::vector<std::uint8_t>(s.begin(), s.end());
  };
  EXPECT_THROW(ocmc::detail::decode_ppm(from("P5\n2 2\n255\n")), std::runtime_error);
  EXPECT_THROW(ocmc::detail::decode_ppm(from("P6\n2 2\n65535\n")), std::runtime_error);
  EXPECT_THROW(ocmc::detail::decode_ppm(from("P6\n2 2\n255\nxx")), std::runtime_error);
  EXPECT_THROW(ocmc::detail::decode_ppm(from("P6\n2\n")), std::runtime_error);
}

TEST(ImageIo, PngNormalizesGrayAndAlpha) {
  Image8 img = synth_base();
  img.width = 16;
  img.height = 12;
  img.rgb.resize(16 * 12 * 3);
  for (std::int64_t y = 0; y < 12; ++y)
    for (std::int64_t x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((x * 16 + y) % 256);

  Image8 gray = ocmc::detail::decode_png(write_png_as(PNG_COLOR_TYPE_GRAY, 8, img));
  EXPECT_EQ(gray.width, 16);
  for (std::int64_t x = 0; x < 16; ++x) {
    EXPECT_EQ(gray.at(x, 3, 0), img.at(x, 3, 0));
    EXPECT_EQ(gray.at(x, 3, 1), img.at(x, 3, 0));  // gray replicated to rgb
    EXPECT_EQ(gray.at(x, 3, 2), img.at(x, 3, 0));
  }

  Image8 rgba = ocmc::detail::decode_png(write_png_as(PNG_COLOR_TYPE_RGBA, 8, img));
  EXPECT_EQ(rgba.rgb, img.rgb);  // alpha stripped
}

TEST(ImageIo, RejectsGarbage) {
  const char* path = "/tmp/ocmc_img_garbage.bin";
  ocmc::detail::write_file(path, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_THROW(load_image(path), std::runtime_error);
  EXPECT_THROW(load_image("/tmp/ocmc_no_such_file.png"), std::runtime_error);
  std::vector<std::uint8_t> broken = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n', 0, 0};
  ocmc::detail::write_file(path, broken);
  EXPECT_THROW(load_image(path), std::runtime_error);
  std::remove(path);
}

TEST(ImageTensor, RoundTripExact) {
  Image8 img = synth_base();
  Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{1, 3, img.height, img.width}));
  for (double v : t.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  Image8 back = tensor_to_image(t);
  EXPECT_EQ(back.rgb, img.rgb);
}

TEST(ImageTensor, NormalizationEndpoints) {
  Image8 img;
  img.width = 2;
  img.height = 1;
  img.rgb = {0, 0, 0, 255, 255, 255};
  Tensor t = image_to_tensor(img);
  EXPECT_DOUBLE_EQ(t.values()[0], -1.0);
  EXPECT_DOUBLE_EQ(t.values()[1], 1.0);
}

TEST(ImageTensor, OutOfRangeClamped) {
  Tensor t = Tensor::from({1, 3, 1, 1}, {-3.0, 0.0, 4.0});
  Image8 img = tensor_to_image(t);
  EXPECT_EQ(img.rgb[0], 0);
  EXPECT_EQ(img.rgb[1], 128);  // (0+1)*127.5 = 127.5 rounds away from zero
  EXPECT_EQ(img.rgb[2], 255);
  EXPECT_THROW(tensor_to_image(Tensor::zeros({1, 1, 2, 2})), std::invalid_argument);
}
