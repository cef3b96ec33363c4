#include "cellsynth/png_io.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace cellsynth {

namespace {

using u8 = std::uint8_t;
using u32 = std::uint32_t;

u32 crc32(const u8* data, size_t n, u32 crc = 0xFFFFFFFFu) {
  static std::array<u32, 256> table = [] {
    std::array<u32, 256> t{};
    for (u32 i = 0; i < 256; ++i) {
      u32 c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc;
}

u32 adler32(const u8* data, size_t n) {
  u32 a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_be32(std::vector<u8>& v, u32 x) {
  v.push_back(static_cast<u8>(x >> 24));
  v.push_back(static_cast<u8>(x >> 16));
  v.push_back(static_cast<u8>(x >> 8));
  v.push_back(static_cast<u8>(x));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<u8>& payload) {
  std::vector<u8> head;
  put_be32(head, static_cast<u32>(payload.size()));
  out.write(reinterpret_cast<const char*>(head.data()), 4);
  std::vector<u8> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.write(reinterpret_cast<const char*>(body.data()),
            static_cast<std::streamsize>(body.size()));
  u32 crc = crc32(body.data(), body.size()) ^ 0xFFFFFFFFu;
  std::vector<u8> tail;
  put_be32(tail, crc);
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

u8 quantize(double v) {
  double c = std::min(std::max(v, 0.0), 1.0);
  return static_cast<u8>(std::lround(c * 255.0));
}

// ---- inflate ----

struct BitReader {
  const u8* data;
  size_t size;
  size_t pos = 0;
  u32 bitbuf = 0;
  int bitcount = 0;

  u32 bits(int n) {
    while (bitcount < n) {
      if (pos >= size) throw std::runtime_error("png: truncated deflate stream");
      bitbuf |= static_cast<u32>(data[pos++]) << bitcount;
      bitcount += 8;
    }
    u32 v = bitbuf & ((1u << n) - 1u);
    bitbuf >>= n;
    bitcount -= n;
    return v;
  }
  void align() {
    bitbuf = 0;
    bitcount = 0;
  }
};

struct Huffman {
  // Canonical Huffman decode via per-length first-code tables.
  std::array<int, 16> count{};
  std::array<int, 16> first_code{};
  std::array<int, 16> first_symbol{};
  std::vector<int> symbols;

  void build(const std::vector<int>& lengths) {
    count.fill(0);
    for (int l : lengths) {
      if (l > 0) ++count[static_cast<size_t>(l)];
    }
    int code = 0, sym = 0;
    for (int l = 1; l < 16; ++l) {
      code = (code + count[static_cast<size_t>(l - 1)]) << 1;
      first_code[static_cast<size_t>(l)] = code;
      first_symbol[static_cast<size_t>(l)] = sym;
      sym += count[static_cast<size_t>(l)];
    }
    symbols.assign(static_cast<size_t>(sym), 0);
    std::array<int, 16> next{};
    for (int l = 1; l < 16; ++l) next[static_cast<size_t>(l)] = first_symbol[static_cast<size_t>(l)];
    for (size_t s = 0; s < lengths.size(); ++s) {
      int l = lengths[s];
      if (l > 0) symbols[static_cast<size_t>(next[static_cast<size_t>(l)]++)] = static_cast<int>(s);
    }
  }

  int decode(BitReader& br) const {
    int code = 0;
    for (int l = 1; l < 16; ++l) {
      code |= static_cast<int>(br.bits(1));
      int cnt = count[static_cast<size_t>(l)];
      int fc = first_code[static_cast<size_t>(l)];
      if (code - fc < cnt) {
        return symbols[static_cast<size_t>(first_symbol[static_cast<size_t>(l)] + code - fc)];
      }
      code <<= 1;
    }
    throw std::runtime_error("png: invalid Huffman code");
  }
};

std::vector<u8> inflate(const u8* data, size_t size) {
  static const int len_base[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,
                                   15, 17, 19, 23, 27, 31, 35, 43, 51,  59,
                                   67, 83, 99, 115, 131, 163, 195, 227, 258};
  static const int len_extra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                    2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
  static const int dist_base[30] = {1,    2,    3,    4,    5,    7,     9,    13,
                                    17,   25,   33,   49,   65,   97,    129,  193,
                                    257,  385,  513,  769,  1025, 1537,  2049, 3073,
                                    4097, 6145, 8193, 12289, 16385, 24577};
  static const int dist_extra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5, 5, 6,
                                     6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

  BitReader br{data, size};
  std::vector<u8> out;
  for (;;) {
    u32 bfinal = br.bits(1);
    u32 btype = br.bits(2);
    if (btype == 0) {
      br.align();
      if (br.pos + 4 > br.size) throw std::runtime_error("png: truncated stored block");
      u32 len = static_cast<u32>(br.data[br.pos]) | (static_cast<u32>(br.data[br.pos + 1]) << 8);
      br.pos += 4; // skip LEN + NLEN
      if (br.pos + len > br.size) throw std::runtime_error("png: truncated stored block");
      out.insert(out.end(), br.data + br.pos, br.data + br.pos + len);
      br.pos += len;
    } else if (btype == 1 || btype == 2) {
      Huffman lit, dist;
      if (btype == 1) {
        std::vector<int> ll(288);
        for (int i = 0; i < 144; ++i) ll[static_cast<size_t>(i)] = 8;
        for (int i = 144; i < 256; ++i) ll[static_cast<size_t>(i)] = 9;
        for (int i = 256; i < 280; ++i) ll[static_cast<size_t>(i)] = 7;
        for (int i = 280; i < 288; ++i) ll[static_cast<size_t>(i)] = 8;
        lit.build(ll);
        dist.build(std::vector<int>(30, 5));
      } else {
        int hlit = static_cast<int>(br.bits(5)) + 257;
        int hdist = static_cast<int>(br.bits(5)) + 1;
        int hclen = static_cast<int>(br.bits(4)) + 4;
        static const int order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                      11, 4,  12, 3, 13, 2, 14, 1, 15};
        std::vector<int> clen(19, 0);
        for (int i = 0; i < hclen; ++i) clen[static_cast<size_t>(order[i])] = static_cast<int>(br.bits(3));
        Huffman cl;
        cl.build(clen);
        std::vector<int> lengths;
        lengths.reserve(static_cast<size_t>(hlit + hdist));
        while (static_cast<int>(lengths.size()) < hlit + hdist) {
          int sym = cl.decode(br);
          if (sym < 16) {
            lengths.push_back(sym);
          } else if (sym == 16) {
            if (lengths.empty()) throw std::runtime_error("png: bad code-length repeat");
            int rep = 3 + static_cast<int>(br.bits(2));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), lengths.back());
          } else if (sym == 17) {
            int rep = 3 + static_cast<int>(br.bits(3));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), 0);
          } else {
            int rep = 11 + static_cast<int>(br.bits(7));
            lengths.insert(lengths.end(), static_cast<size_t>(rep), 0);
          }
        }
        lit.build(std::vector<int>(lengths.begin(), lengths.begin() + hlit));
        dist.build(std::vector<int>(lengths.begin() + hlit, lengths.end()));
      }
      for (;;) {
        int sym = lit.decode(br);
        if (sym < 256) {
          out.push_back(static_cast<u8>(sym));
        } else if (sym == 256) {
          break;
        } else {
          int li = sym - 257;
          if (li >= 29) throw std::runtime_error("png: bad length symbol");
          int length = len_base[li] + static_cast<int>(br.bits(len_extra[li]));
          int di = dist.decode(br);
          if (di >= 30) throw std::runtime_error("png: bad distance symbol");
          size_t distance =
              static_cast<size_t>(dist_base[di]) + br.bits(dist_extra[di]);
          if (distance > out.size()) throw std::runtime_error("png: distance too far");
          size_t start = out.size() - distance;
          for (int k = 0; k < length; ++k) out.push_back(out[start + static_cast<size_t>(k)]);
        }
      }
    } else {
      throw std::runtime_error("png: invalid block type");
    }
    if (bfinal) break;
  }
  return out;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

} // namespace

void write_png(const Image& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0) {
    throw std::invalid_argument("write_png: empty image");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_png: cannot open " + path);

  static const u8 sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<u8> ihdr;
  put_be32(ihdr, static_cast<u32>(img.width));
  put_be32(ihdr, static_cast<u32>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(6);  // RGBA
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);

  // Raw scanlines, filter type 0 per row.
  std::vector<u8> raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + static_cast<size_t>(img.width) * 4));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.width; ++x) {
      for (int ch = 0; ch < 4; ++ch) raw.push_back(quantize(img.at(x, y, ch)));
    }
  }

  // zlib stream with stored deflate blocks.
  std::vector<u8> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  while (off < raw.size() || raw.empty()) {
    size_t n = std::min<size_t>(65535, raw.size() - off);
    bool final = off + n == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<u8>(n & 0xFF));
    z.push_back(static_cast<u8>(n >> 8));
    z.push_back(static_cast<u8>(~n & 0xFF));
    z.push_back(static_cast<u8>((~n >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + n));
    off += n;
    if (final) break;
  }
  put_be32(z, adler32(raw.data(), raw.size()));
  write_chunk(out, "IDAT", z);
  write_chunk(out, "IEND", {});
  if (!out) throw std::runtime_error("write_png: write failure on " + path);
}

Image read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<u8> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  static const u8 sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0) {
    throw std::runtime_error("read_png: not a PNG file: " + path);
  }

  auto be32 = [&](size_t i) {
    return (static_cast<u32>(file[i]) << 24) | (static_cast<u32>(file[i + 1]) << 16) |
           (static_cast<u32>(file[i + 2]) << 8) | static_cast<u32>(file[i + 3]);
  };

  int width = 0, height = 0, color_type = 0, bit_depth = 0;
  std::vector<u8> idat;
  size_t pos = 8;
  while (pos + 8 <= file.size()) {
    u32 len = be32(pos);
    std::string type(file.begin() + static_cast<long>(pos + 4), file.begin() + static_cast<long>(pos + 8));
    size_t body = pos + 8;
    if (body + len > file.size()) throw std::runtime_error("read_png: truncated chunk");
    if (type == "IHDR") {
      width = static_cast<int>(be32(body));
      height = static_cast<int>(be32(body + 4));
      bit_depth = file[body + 8];
      color_type = file[body + 9];
      if (file[body + 12] != 0) throw std::runtime_error("read_png: interlaced PNG unsupported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), file.begin() + static_cast<long>(body),
                  file.begin() + static_cast<long>(body + len));
    } else if (type == "IEND") {
      break;
    }
    pos = body + len + 4;
  }
  if (width <= 0 || height <= 0) throw std::runtime_error("read_png: missing IHDR");
  if (bit_depth != 8 || (color_type != 6 && color_type != 2)) {
    throw std::runtime_error("read_png: only 8-bit RGB/RGBA supported");
  }
  if (idat.size() < 2) throw std::runtime_error("read_png: missing image data");

  std::vector<u8> raw = inflate(idat.data() + 2, idat.size() - 2);
  const int channels = (color_type == 6) ? 4 : 3;
  const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
  if (raw.size() < static_cast<size_t>(height) * (stride + 1)) {
    throw std::runtime_error("read_png: decompressed data too short");
  }

  // Undo per-row filters in place on a copy without filter bytes.
  std::vector<u8> px(static_cast<size_t>(height) * stride);
  for (int y = 0; y < height; ++y) {
    u8 filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const u8* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
    u8* dst = px.data() + static_cast<size_t>(y) * stride;
    const u8* prev = (y > 0) ? px.data() + static_cast<size_t>(y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      int a = (i >= static_cast<size_t>(channels)) ? dst[i - static_cast<size_t>(channels)] : 0;
      int b = prev ? prev[i] : 0;
      int c = (prev && i >= static_cast<size_t>(channels)) ? prev[i - static_cast<size_t>(channels)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("read_png: unknown filter type");
      }
      dst[i] = static_cast<u8>(v & 0xFF);
    }
  }

  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const u8* p = px.data() + static_cast<size_t>(y) * stride + static_cast<size_t>(x) * channels;
      img.at(x, y, 0) = p[0] / 255.0;
      img.at(x, y, 1) = p[1] / 255.0;
      img.at(x, y, 2) = p[2] / 255.0;
      img.at(x, y, 3) = (channels == 4) ? p[3] / 255.0 : 1.0;
    }
  }
  return img;
}

} // namespace cellsynth
