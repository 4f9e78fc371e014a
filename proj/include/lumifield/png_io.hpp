#pragma once

// Minimal PNG reader/writer backed by zlib. Handles the subset needed here:
// 8-bit grayscale / gray+alpha / RGB / RGBA, no interlacing, no palettes.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lumifield {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;               // 1, 2, 3 or 4
  std::vector<std::uint8_t> data;  // height*width*channels
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t read_u32_be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  out.resize(bound);
  return out;
}

inline std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& comp,
                                              std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &len, comp.data(), static_cast<uLong>(comp.size()));
  if (rc != Z_OK || len != expected) throw std::runtime_error("png: inflate failed");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline void write_png(const std::string& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: only gray or RGB output supported");
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("write_png: buffer size mismatch");

  std::vector<std::uint8_t> raw;
  raw.reserve((static_cast<std::size_t>(img.width) * img.channels + 1) * img.height);
  for (int r = 0; r < img.height; ++r) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* row = img.data.data() + static_cast<std::size_t>(r) * img.width * img.channels;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(img.width) * img.channels);
  }

  std::vector<std::uint8_t> ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // color type
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter
  ihdr.push_back(0);                                   // interlace

  std::vector<std::uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  detail::append_chunk(file, "IHDR", ihdr);
  detail::append_chunk(file, "IDAT", detail::zlib_deflate(raw));
  detail::append_chunk(file, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

inline PngImage read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
    throw std::runtime_error("read_png: " + path + " is not a PNG file");

  PngImage img;
  int bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  std::size_t at = 8;
  while (at + 8 <= file.size()) {
    const std::uint32_t len = detail::read_u32_be(file.data() + at);
    if (at + 12 + len > file.size()) throw std::runtime_error("read_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(file.data() + at + 4);
    const std::uint8_t* payload = file.data() + at + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.width = static_cast<int>(detail::read_u32_be(payload));
      img.height = static_cast<int>(detail::read_u32_be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (bit_depth != 8) throw std::runtime_error("read_png: only 8-bit depth supported");
      if (payload[12] != 0) throw std::runtime_error("read_png: interlaced PNGs not supported");
      switch (color_type) {
        case 0: img.channels = 1; break;
        case 2: img.channels = 3; break;
        case 4: img.channels = 2; break;
        case 6: img.channels = 4; break;
        default: throw std::runtime_error("read_png: palette PNGs not supported");
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    at += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0 || img.channels == 0)
    throw std::runtime_error("read_png: missing IHDR");

  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw = detail::zlib_inflate(idat, (stride + 1) * img.height);

  img.data.assign(stride * img.height, 0);
  const int bpp = img.channels;
  for (int r = 0; r < img.height; ++r) {
    const std::uint8_t filter = raw[(stride + 1) * r];
    const std::uint8_t* src = raw.data() + (stride + 1) * r + 1;
    std::uint8_t* dst = img.data.data() + stride * r;
    const std::uint8_t* prev = r > 0 ? img.data.data() + stride * (r - 1) : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw std::runtime_error("read_png: unknown filter type");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

// Single-channel mask: zero pixels are hidden, everything else observed.
inline std::vector<std::uint8_t> load_mask_png(const std::string& path, int expect_h, int expect_w) {
  const PngImage png = read_png(path);
  if (png.width != expect_w || png.height != expect_h)
    throw std::runtime_error("mask size " + std::to_string(png.width) + "x" +
                             std::to_string(png.height) + " does not match image");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(expect_h) * expect_w);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = png.data[i * png.channels] > 0 ? 1 : 0;
  return mask;
}

}  // namespace lumifield
