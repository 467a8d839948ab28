#include "pseudoseg/pngio.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pseudoseg::png {

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

void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

void write_png(const std::string& path, int height, int width, int channels,
               const std::vector<uint8_t>& pixels) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("png: non-positive dimensions");
    size_t expect = static_cast<size_t>(height) * width * channels;
    if (pixels.size() != expect)
        throw std::invalid_argument("png: pixel buffer size mismatch");

    // filter byte 0 (None) per scanline
    size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * height);
    for (int r = 0; r < height; ++r) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels.begin() + r * stride, pixels.begin() + (r + 1) * stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    comp.resize(bound);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(width));
    put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);                                        // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);                    // color type: gray / rgb
    ihdr.push_back(0);                                        // compression
    ihdr.push_back(0);                                        // filter
    ihdr.push_back(0);                                        // interlace
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

uint8_t paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace

void write_gray(const std::string& path, int height, int width, const std::vector<uint8_t>& pixels) {
    write_png(path, height, width, 1, pixels);
}

void write_rgb(const std::string& path, int height, int width, const std::vector<uint8_t>& rgb) {
    write_png(path, height, width, 3, rgb);
}

void read_gray(const std::string& path, int& height, int& width, std::vector<uint8_t>& pixels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32(&buf[pos]);
        if (pos + 12 + len > buf.size()) throw std::runtime_error("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
        const uint8_t* data = &buf[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = static_cast<int>(get_u32(data));
            h = static_cast<int>(get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (bit_depth != 8 || (color_type != 0 && color_type != 2) || data[12] != 0)
                throw std::runtime_error("png: unsupported format (need 8-bit gray/rgb): " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || idat.empty()) throw std::runtime_error("png: missing data: " + path);

    int channels = (color_type == 0) ? 1 : 3;
    size_t stride = static_cast<size_t>(w) * channels;
    uLongf raw_len = static_cast<uLongf>((stride + 1) * h);
    std::vector<uint8_t> raw(raw_len);
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != (stride + 1) * static_cast<size_t>(h))
        throw std::runtime_error("png: inflate failed: " + path);

    // unfilter
    std::vector<uint8_t> img(stride * h);
    int bpp = channels;
    for (int r = 0; r < h; ++r) {
        uint8_t filter = raw[r * (stride + 1)];
        const uint8_t* src = &raw[r * (stride + 1) + 1];
        uint8_t* dst = &img[r * stride];
        const uint8_t* up = r > 0 ? &img[(r - 1) * stride] : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
            int x = src[i];
            switch (filter) {
                case 0: dst[i] = static_cast<uint8_t>(x); break;
                case 1: dst[i] = static_cast<uint8_t>(x + a); break;
                case 2: dst[i] = static_cast<uint8_t>(x + b); break;
                case 3: dst[i] = static_cast<uint8_t>(x + ((a + b) >> 1)); break;
                case 4: dst[i] = static_cast<uint8_t>(x + paeth(a, b, c)); break;
                default: throw std::runtime_error("png: bad filter byte");
            }
        }
    }

    height = h;
    width = w;
    if (channels == 1) {
        pixels = std::move(img);
    } else {
        pixels.resize(static_cast<size_t>(w) * h);
        for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[i * 3];
    }
}

}  // namespace pseudoseg::png
