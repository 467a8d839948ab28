#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseudoseg {

struct GrayscaleImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // row-major, values in [0,1]
    std::string id;

    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // strictly 0/1
    std::string id;

    uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }

    size_t area() const {
        size_t n = 0;
        for (uint8_t v : pixels) n += v;
        return n;
    }
    bool empty_mask() const { return area() == 0; }
};

struct ProbMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, values in [0,1]

    double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
    double& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
};

// Axis-aligned box with inclusive pixel coordinates.
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    long long area() const {
        return static_cast<long long>(x1 - x0 + 1) * static_cast<long long>(y1 - y0 + 1);
    }
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    bool operator==(const Box&) const = default;
};

struct ScoredBox {
    Box box;
    double score = 0.0;
};

inline void require_same_shape(int h1, int w1, int h2, int w2, const char* what) {
    if (h1 != h2 || w1 != w2)
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(h1) +
                                    "x" + std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                                    std::to_string(w2) + ")");
}

inline BinaryMask make_mask(int h, int w, std::string id = {}) {
    BinaryMask m;
    m.height = h;
    m.width = w;
    m.pixels.assign(static_cast<size_t>(h) * w, 0);
    m.id = std::move(id);
    return m;
}

inline ProbMap make_probmap(int h, int w, double fill = 0.0) {
    ProbMap p;
    p.height = h;
    p.width = w;
    p.values.assign(static_cast<size_t>(h) * w, fill);
    return p;
}

// Tight bounding box of the foreground, or nullopt-like sentinel via bool.
inline bool tight_bbox(const BinaryMask& m, Box& out) {
    int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                if (c < x0) x0 = c;
                if (c > x1) x1 = c;
                if (r < y0) y0 = r;
                if (r > y1) y1 = r;
            }
    if (x1 < 0) return false;
    out = Box{x0, y0, x1, y1};
    return true;
}

}  // namespace pseudoseg
