// Copyright (c) 2026 the ocmc authors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit RGB image I/O (PNG and binary PPM) and conversion to and from the
// [-1, 1] tensor domain the codec operates in.
#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocmc/tensor.hpp"

namespace ocmc {

struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

namespace detail {

struct PngMemReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_mem_read(png_structp png, png_bytep out, png_size_t len) {
  auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
  if (r->pos + len > r->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, r->data + r->pos, len);
  r->pos += len;
}

inline void png_mem_write(png_structp png, png_bytep data, png_size_t len) {
  auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  v->insert(v->end(), data, data + len);
}

inline void png_mem_flush(png_structp) {}

inline Image8 decode_png(const std::vector<std::uint8_t>& bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("image: cannot initialize PNG reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("image: cannot initialize PNG reader");
  }

  Image8 img;
  std::vector<png_bytep> rows;
  PngMemReader reader{bytes.data(), bytes.size(), 0};

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("image: malformed PNG data");
  }

  png_set_read_fn(png, &reader, png_mem_read);
  png_read_info(png, info);

  // Normalize every colour layout libpng can hand us down to 8-bit RGB.
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<std::int64_t>(png_get_image_width(png, info));
  img.height = static_cast<std::int64_t>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8)
    longjmp(png_jmpbuf(png), 1);

  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  rows.resize(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.rgb.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline std::vector<std::uint8_t> encode_png(const Image8& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("image: cannot initialize PNG writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("image: cannot initialize PNG writer");
  }

  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("image: PNG encode failed");
  }

  png_set_write_fn(png, &out, png_mem_write, png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline Image8 decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::int64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
      throw std::runtime_error("image: malformed PPM header");
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1LL << 31)) throw std::runtime_error("image: malformed PPM header");
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw std::runtime_error("image: not a binary PPM");
  pos = 2;
  Image8 img;
  img.width = read_int();
  img.height = read_int();
  const std::int64_t maxval = read_int();
  if (img.width <= 0 || img.height <= 0)
    throw std::runtime_error("image: malformed PPM header");
  if (maxval != 255) throw std::runtime_error("image: PPM maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw std::runtime_error("image: malformed PPM header");
  ++pos;  // exactly one whitespace byte separates header and pixels
  const std::size_t need = static_cast<std::size_t>(img.width * img.height * 3);
  if (bytes.size() - pos < need) throw std::runtime_error("image: truncated PPM data");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const Image8& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot create file: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Dispatches on content (PNG signature or PPM magic), not file name.
inline Image8 load_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  static const std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0)
    return detail::decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6')
    return detail::decode_ppm(bytes);
  throw std::runtime_error("unsupported image format: " + path);
}

// Format follows the extension; .ppm writes PPM, anything else PNG.
inline void save_image(const std::string& path, const Image8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width * img.height * 3))
    throw std::invalid_argument("save_image: inconsistent image");
  detail::write_file(path, has_suffix(path, ".ppm") ? detail::encode_ppm(img)
                                                    : detail::encode_png(img));
}

// [0,255] bytes -> [-1,1] planar tensor, exactly v/127.5 - 1.
inline Tensor image_to_tensor(const Image8& img) {
  Tensor t = Tensor::zeros({1, 3, img.height, img.width});
  auto& v = t.values();
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        v[static_cast<std::size_t>((c * img.height + y) * img.width + x)] =
            static_cast<double>(img.at(x, y, c)) / 127.5 - 1.0;
  return t;
}

inline Image8 tensor_to_image(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("tensor_to_image: need a 1x3xHxW tensor");
  Image8 img;
  img.width = s.w;
  img.height = s.h;
  img.rgb.resize(static_cast<std::size_t>(s.w * s.h * 3));
  const auto& v = t.values();
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        const double f = (v[static_cast<std::size_t>((c * s.h + y) * s.w + x)] + 1.0) * 127.5;
        const long q = std::lround(f);
        img.at(x, y, c) = static_cast<std::uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
      }
  return img;
}

}  // namespace ocmc
