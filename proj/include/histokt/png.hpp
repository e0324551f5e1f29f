#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <zlib.h>

#include "histokt/crc32.hpp"
#include "histokt/errors.hpp"
#include "histokt/image.hpp"
#include "histokt/io_util.hpp"

namespace histokt {

namespace pngdetail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back((v >> 24) & 0xFF);
  out.push_back((v >> 16) & 0xFF);
  out.push_back((v >> 8) & 0xFF);
  out.push_back(v & 0xFF);
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) << 24 | static_cast<std::uint32_t>(p[1]) << 16 |
         static_cast<std::uint32_t>(p[2]) << 8 | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::uint8_t* data, std::size_t len) {
  put_u32_be(out, static_cast<std::uint32_t>(len));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  put_u32_be(out, crc32(out.data() + crc_start, 4 + len));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

inline constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

}  // namespace pngdetail

/// Encodes an 8-bit RGB PNG: color type 2, no interlace, filter 0 rows,
/// one IDAT with a fixed zlib level, so output bytes are deterministic.
inline std::vector<std::uint8_t> encode_png(const ImageRGB& img) {
  using namespace pngdetail;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((row_bytes + 1) * img.height);
  for (std::uint32_t y = 0; y < img.height; ++y) {
    std::uint8_t* row = raw.data() + y * (row_bytes + 1);
    row[0] = 0;  // filter: None
    std::memcpy(row + 1, img.pixels.data() + y * row_bytes, row_bytes);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("png: deflate failed");
  }
  comp.resize(comp_len);

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  std::uint8_t ihdr[13];
  ihdr[0] = (img.width >> 24) & 0xFF;
  ihdr[1] = (img.width >> 16) & 0xFF;
  ihdr[2] = (img.width >> 8) & 0xFF;
  ihdr[3] = img.width & 0xFF;
  ihdr[4] = (img.height >> 24) & 0xFF;
  ihdr[5] = (img.height >> 16) & 0xFF;
  ihdr[6] = (img.height >> 8) & 0xFF;
  ihdr[7] = img.height & 0xFF;
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter method
  ihdr[12] = 0;  // interlace: none
  append_chunk(out, "IHDR", ihdr, 13);
  append_chunk(out, "IDAT", comp.data(), comp.size());
  append_chunk(out, "IEND", nullptr, 0);
  return out;
}

/// Decodes 8-bit gray / gray+alpha / RGB / RGBA PNGs (alpha dropped, gray
/// replicated). Palette and interlaced files are rejected.
inline ImageRGB decode_png(const std::vector<std::uint8_t>& bytes) {
  using namespace pngdetail;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw DataError("png: bad signature");
  }

  std::uint32_t width = 0, height = 0;
  int channels = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> idat;

  std::size_t pos = 8;
  while (pos + 12 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = get_u32_be(bytes.data() + pos);
    if (pos + 12 + static_cast<std::size_t>(len) > bytes.size()) {
      throw DataError("png: truncated chunk");
    }
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    const std::uint32_t want_crc = get_u32_be(data + len);
    if (crc32(bytes.data() + pos + 4, 4 + len) != want_crc) {
      throw DataError("png: chunk CRC mismatch");
    }

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw DataError("png: bad IHDR");
      width = get_u32_be(data);
      height = get_u32_be(data + 4);
      const std::uint8_t depth = data[8], color = data[9], interlace = data[12];
      if (width == 0 || height == 0) throw DataError("png: zero dimension");
      if (depth != 8) throw DataError("png: only 8-bit depth supported");
      if (interlace != 0) throw DataError("png: interlaced files not supported");
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw DataError("png: unsupported color type " + std::to_string(color));
      }
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    // Ancillary chunks are skipped.
    pos += 12 + len;
  }
  if (!saw_ihdr || idat.empty()) throw DataError("png: missing IHDR or IDAT");

  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_len = (row_bytes + 1) * height;
  std::vector<std::uint8_t> raw(raw_len);
  uLongf dest_len = static_cast<uLongf>(raw_len);
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_len) throw DataError("png: inflate failed");

  // Defilter in place: raw rows are [filter byte][row bytes].
  const int bpp = channels;
  std::vector<std::uint8_t> prior(row_bytes, 0);
  std::vector<std::uint8_t> recon(row_bytes);
  ImageRGB out(width, height);
  for (std::uint32_t y = 0; y < height; ++y) {
    const std::uint8_t* row = raw.data() + y * (row_bytes + 1);
    const std::uint8_t filter = row[0];
    const std::uint8_t* src = row + 1;
    switch (filter) {
      case 0:
        std::memcpy(recon.data(), src, row_bytes);
        break;
      case 1:
        for (std::size_t x = 0; x < row_bytes; ++x) {
          const int left = x >= static_cast<std::size_t>(bpp) ? recon[x - bpp] : 0;
          recon[x] = static_cast<std::uint8_t>(src[x] + left);
        }
        break;
      case 2:
        for (std::size_t x = 0; x < row_bytes; ++x) {
          recon[x] = static_cast<std::uint8_t>(src[x] + prior[x]);
        }
        break;
      case 3:
        for (std::size_t x = 0; x < row_bytes; ++x) {
          const int left = x >= static_cast<std::size_t>(bpp) ? recon[x - bpp] : 0;
          recon[x] = static_cast<std::uint8_t>(src[x] + ((left + prior[x]) >> 1));
        }
        break;
      case 4:
        for (std::size_t x = 0; x < row_bytes; ++x) {
          const int left = x >= static_cast<std::size_t>(bpp) ? recon[x - bpp] : 0;
          const int upleft = x >= static_cast<std::size_t>(bpp) ? prior[x - bpp] : 0;
          recon[x] = static_cast<std::uint8_t>(src[x] + pngdetail::paeth(left, prior[x], upleft));
        }
        break;
      default:
        throw DataError("png: unknown filter type " + std::to_string(filter));
    }

    std::uint8_t* dst = out.px(0, y);
    for (std::uint32_t x = 0; x < width; ++x) {
      const std::uint8_t* p = recon.data() + static_cast<std::size_t>(x) * channels;
      switch (channels) {
        case 1: dst[0] = dst[1] = dst[2] = p[0]; break;
        case 2: dst[0] = dst[1] = dst[2] = p[0]; break;
        case 3: dst[0] = p[0]; dst[1] = p[1]; dst[2] = p[2]; break;
        case 4: dst[0] = p[0]; dst[1] = p[1]; dst[2] = p[2]; break;
      }
      dst += 3;
    }
    prior = recon;
  }
  return out;
}

inline void write_png(const ImageRGB& img, const std::string& path) {
  write_file_atomic(path, encode_png(img));
}

inline ImageRGB read_png(const std::string& path) {
  try {
    return decode_png(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " (" + path + ")");
  }
}

}  // namespace histokt
