#pragma once

// Radiance RGBE (.hdr) reader and writer. The reader handles flat pixels,
// new-style RLE scanlines and old-style run markers; the writer emits flat
// scanlines. Component decode: value = mantissa * 2^(E-128) / 256.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lumifield/image.hpp"

namespace lumifield {

class HdrParseError : public std::runtime_error {
 public:
  HdrParseError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}

  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline Rgb rgbe_decode(const std::array<std::uint8_t, 4>& rgbe) {
  if (rgbe[3] == 0) return {0.0f, 0.0f, 0.0f};
  const float scale = std::ldexp(1.0f, static_cast<int>(rgbe[3]) - 136);  // 2^(E-128)/256
  return {rgbe[0] * scale, rgbe[1] * scale, rgbe[2] * scale};
}

inline std::array<std::uint8_t, 4> rgbe_encode(const Rgb& c) {
  const float maxc = std::max({c[0], c[1], c[2]});
  if (maxc < 1e-38f) return {0, 0, 0, 0};
  int e = 0;
  std::frexp(maxc, &e);  // maxc = m * 2^e with m in [0.5, 1)
  const float scale = std::ldexp(1.0f, 8 - e);
  return {static_cast<std::uint8_t>(c[0] * scale), static_cast<std::uint8_t>(c[1] * scale),
          static_cast<std::uint8_t>(c[2] * scale), static_cast<std::uint8_t>(e + 128)};
}

inline EnvironmentImage load_hdr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_hdr: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  std::size_t at = 0;
  auto read_line = [&]() -> std::string {
    std::string line;
    while (at < buf.size() && buf[at] != '\n') line.push_back(static_cast<char>(buf[at++]));
    if (at < buf.size()) ++at;  // consume newline
    return line;
  };

  const std::string magic = read_line();
  if (magic.rfind("#?", 0) != 0) throw HdrParseError("missing #? radiance signature", 0);

  bool format_ok = false;
  while (at < buf.size()) {
    const std::size_t line_start = at;
    const std::string line = read_line();
    if (line.empty()) break;  // header terminator
    if (line.rfind("FORMAT=", 0) == 0) {
      if (line != "FORMAT=32-bit_rle_rgbe")
        throw HdrParseError("unsupported FORMAT '" + line + "'", line_start);
      format_ok = true;
    }
  }
  if (!format_ok) throw HdrParseError("missing FORMAT=32-bit_rle_rgbe line", at);

  const std::size_t res_start = at;
  const std::string res = read_line();
  int h = 0, w = 0;
  if (std::sscanf(res.c_str(), "-Y %d +X %d", &h, &w) != 2 || h <= 0 || w <= 0)
    throw HdrParseError("unsupported resolution line '" + res + "'", res_start);

  EnvironmentImage img = EnvironmentImage::zero(h, w);
  auto need = [&](std::size_t n, const char* what) {
    if (at + n > buf.size()) throw HdrParseError(std::string("truncated scanline: ") + what, at);
  };

  std::array<std::uint8_t, 4> prev{0, 0, 0, 0};
  for (int row = 0; row < h; ++row) {
    need(4, "scanline header");
    const std::uint8_t* p = buf.data() + at;
    const bool new_rle = p[0] == 2 && p[1] == 2 && ((p[2] << 8) | p[3]) == w && w >= 8 && w < 32768;
    if (new_rle) {
      at += 4;
      std::vector<std::uint8_t> scan(static_cast<std::size_t>(w) * 4);
      for (int comp = 0; comp < 4; ++comp) {
        int col = 0;
        while (col < w) {
          need(1, "RLE run header");
          const int count = buf[at++];
          if (count > 128) {
            const int run = count - 128;
            if (col + run > w) throw HdrParseError("RLE run overflows scanline", at - 1);
            need(1, "RLE run value");
            const std::uint8_t v = buf[at++];
            for (int i = 0; i < run; ++i) scan[static_cast<std::size_t>(col + i) * 4 + comp] = v;
            col += run;
          } else {
            if (count == 0) throw HdrParseError("zero-length RLE literal", at - 1);
            if (col + count > w) throw HdrParseError("RLE literal overflows scanline", at - 1);
            need(static_cast<std::size_t>(count), "RLE literal bytes");
            for (int i = 0; i < count; ++i)
              scan[static_cast<std::size_t>(col + i) * 4 + comp] = buf[at++];
            col += count;
          }
        }
      }
      for (int col = 0; col < w; ++col) {
        const std::array<std::uint8_t, 4> rgbe = {scan[col * 4 + 0], scan[col * 4 + 1],
                                                  scan[col * 4 + 2], scan[col * 4 + 3]};
        img.set_color(row, col, rgbe_decode(rgbe));
        prev = rgbe;
      }
    } else {
      int col = 0;
      int old_rle_shift = 0;
      while (col < w) {
        need(4, "flat pixel");
        std::array<std::uint8_t, 4> rgbe = {buf[at], buf[at + 1], buf[at + 2], buf[at + 3]};
        at += 4;
        if (rgbe[0] == 1 && rgbe[1] == 1 && rgbe[2] == 1) {
          // old-style run: repeat previous pixel, count scaled by shift
          const int run = static_cast<int>(rgbe[3]) << old_rle_shift;
          if (col == 0 && row == 0) throw HdrParseError("old-style run with no previous pixel", at - 4);
          if (col + run > w) throw HdrParseError("old-style run overflows scanline", at - 4);
          const Rgb c = rgbe_decode(prev);
          for (int i = 0; i < run; ++i) img.set_color(row, col + i, c);
          col += run;
          old_rle_shift += 8;
        } else {
          img.set_color(row, col, rgbe_decode(rgbe));
          prev = rgbe;
          ++col;
          old_rle_shift = 0;
        }
      }
    }
  }
  return img;
}

inline void save_hdr(const EnvironmentImage& img, const std::string& path) {
  img.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_hdr: cannot open " + path + " for writing");
  f << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y " << img.height << " +X " << img.width << "\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 4);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto rgbe = rgbe_encode(img.color(r, c));
      std::memcpy(row.data() + static_cast<std::size_t>(c) * 4, rgbe.data(), 4);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("save_hdr: write failed for " + path);
}

}  // namespace lumifield
