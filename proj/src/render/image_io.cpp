#include "mvgs/render/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace mvgs::render {

using diff::NDArray;
using diff::Shape;

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

const uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

}  // namespace

std::vector<uint8_t> encode_png(const NDArray& rgb01) {
    if (rgb01.ndim() != 3 || rgb01.shape[2] != 3)
        throw FormatError("encode_png: need [H,W,3] image, got " + diff::shape_str(rgb01.shape));
    const int h = rgb01.shape[0], w = rgb01.shape[1];

    std::vector<uint8_t> raw(static_cast<size_t>(h) * (static_cast<size_t>(w) * 3 + 1));
    size_t o = 0;
    for (int y = 0; y < h; ++y) {
        raw[o++] = 0;  // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = rgb01[(static_cast<int64_t>(y) * w + x) * 3 + c];
                v = std::round(v * 255.0);
                raw[o++] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
            }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw FormatError("encode_png: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    return out;
}

NDArray decode_png(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw FormatError("decode_png: bad PNG signature");

    int w = 0, h = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_ihdr = false;
    while (pos + 12 <= bytes.size()) {
        const uint32_t len = get_u32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw FormatError("decode_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const uint8_t* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError("decode_png: bad IHDR length");
            w = static_cast<int>(get_u32(data));
            h = static_cast<int>(get_u32(data + 4));
            if (data[8] != 8 || data[9] != 2 || data[12] != 0)
                throw FormatError("decode_png: only 8-bit non-interlaced RGB is supported");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || w <= 0 || h <= 0) throw FormatError("decode_png: missing IHDR");

    const size_t stride = static_cast<size_t>(w) * 3;
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw FormatError("decode_png: inflate failed");

    NDArray img(Shape{h, w, 3});
    std::vector<uint8_t> prev(stride, 0), line(stride);
    for (int y = 0; y < h; ++y) {
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t filter = src[0];
        const uint8_t* fx = src + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= 3 ? line[i - 3] : 0;
            const int up = prev[i];
            const int ul = i >= 3 ? prev[i - 3] : 0;
            int v = fx[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw FormatError("decode_png: unknown filter type");
            }
            line[i] = static_cast<uint8_t>(v & 0xff);
        }
        for (size_t i = 0; i < stride; ++i)
            img[static_cast<int64_t>(y) * static_cast<int64_t>(stride) + static_cast<int64_t>(i)] =
                line[i] / 255.0;
        std::swap(prev, line);
    }
    return img;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write: " + path);
}

void write_png(const std::string& path, const NDArray& rgb01) { write_file(path, encode_png(rgb01)); }
NDArray read_png(const std::string& path) { return decode_png(read_file(path)); }

void write_depth(const std::string& path, const NDArray& depth) {
    if (depth.ndim() != 2) throw FormatError("write_depth: need [H,W] map");
    std::vector<uint8_t> out;
    out.reserve(16 + static_cast<size_t>(depth.size()) * 4);
    const char magic[4] = {'F', 'D', 'E', 'P'};
    out.insert(out.end(), magic, magic + 4);
    auto put_le = [&](uint32_t v) {
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
        out.push_back(static_cast<uint8_t>(v >> 16));
        out.push_back(static_cast<uint8_t>(v >> 24));
    };
    put_le(1);  // version
    put_le(static_cast<uint32_t>(depth.shape[1]));
    put_le(static_cast<uint32_t>(depth.shape[0]));
    for (int64_t i = 0; i < depth.size(); ++i) {
        const float f = static_cast<float>(depth[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_le(bits);
    }
    write_file(path, out);
}

NDArray read_depth(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 16) throw FormatError("read_depth: truncated header in " + path);
    if (std::memcmp(bytes.data(), "FDEP", 4) != 0)
        throw FormatError("read_depth: bad magic in " + path);
    auto get_le = [&](size_t off) {
        return static_cast<uint32_t>(bytes[off]) | (static_cast<uint32_t>(bytes[off + 1]) << 8) |
               (static_cast<uint32_t>(bytes[off + 2]) << 16) |
               (static_cast<uint32_t>(bytes[off + 3]) << 24);
    };
    const uint32_t version = get_le(4);
    if (version != 1) throw FormatError("read_depth: unsupported version " + std::to_string(version));
    const uint32_t w = get_le(8), h = get_le(12);
    if (bytes.size() != 16 + static_cast<size_t>(w) * h * 4)
        throw FormatError("read_depth: size mismatch in " + path);
    NDArray out(Shape{static_cast<int>(h), static_cast<int>(w)});
    for (int64_t i = 0; i < out.size(); ++i) {
        const uint32_t bits = get_le(16 + static_cast<size_t>(i) * 4);
        float f;
        std::memcpy(&f, &bits, 4);
        out[i] = static_cast<double>(f);
    }
    return out;
}

}  // namespace mvgs::render
