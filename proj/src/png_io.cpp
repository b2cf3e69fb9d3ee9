#include "faultdet/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace faultdet {

namespace {

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

std::uint32_t get_u32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> head;
  put_u32(head, static_cast<std::uint32_t>(data.size()));
  out.write(reinterpret_cast<const char*>(head.data()), 4);
  out.write(type, 4);
  if (!data.empty()) out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<unsigned char> tail;
  put_u32(tail, static_cast<std::uint32_t>(crc));
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png_rgb8(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw IoError("write_png_rgb8: inconsistent image buffer");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_png_rgb8: cannot open " + path);

  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  write_chunk(out, "IHDR", ihdr);

  // filter byte 0 (None) per scanline
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) {
    raw[(stride + 1) * static_cast<std::size_t>(r)] = 0;
    std::memcpy(&raw[(stride + 1) * static_cast<std::size_t>(r) + 1], &img.rgb[stride * static_cast<std::size_t>(r)], stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("write_png_rgb8: deflate failed for " + path);
  compressed.resize(bound);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});
  if (!out) throw IoError("write_png_rgb8: short write to " + path);
}

ImageU8 read_png_rgb8(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_png_rgb8: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
    throw IoError("read_png_rgb8: " + path + " is not a PNG file");

  ImageU8 img;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  int bit_depth = 0, color_type = -1;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("read_png_rgb8: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const unsigned char* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.width = static_cast<int>(get_u32(data));
      img.height = static_cast<int>(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError("read_png_rgb8: interlaced PNGs unsupported: " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0 || bit_depth != 8 || color_type != 2)
    throw IoError("read_png_rgb8: " + path + " is not 8-bit RGB");

  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(img.height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw IoError("read_png_rgb8: inflate failed for " + path);

  img.rgb.assign(stride * static_cast<std::size_t>(img.height), 0);
  std::vector<unsigned char> prev(stride, 0);
  for (int r = 0; r < img.height; ++r) {
    const unsigned char filter = raw[(stride + 1) * static_cast<std::size_t>(r)];
    const unsigned char* src = &raw[(stride + 1) * static_cast<std::size_t>(r) + 1];
    unsigned char* dst = &img.rgb[stride * static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= 3 ? dst[i - 3] : 0;
      const int b = prev[i];
      const int c = i >= 3 ? prev[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("read_png_rgb8: unknown filter in " + path);
      }
      dst[i] = static_cast<unsigned char>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

}  // namespace faultdet
