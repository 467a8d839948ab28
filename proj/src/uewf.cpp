#include "pseudoseg/uewf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pseudoseg {

EntropyMap pixel_entropy(const ProbMap& p, double eps) {
    EntropyMap e;
    e.height = p.height;
    e.width = p.width;
    e.smoothed = false;
    e.values.resize(p.values.size());
    for (size_t i = 0; i < p.values.size(); ++i) {
        const double v = p.values[i];
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("pixel_entropy: p outside [0,1]");
        double h = -(v * std::log(v + eps) + (1.0 - v) * std::log(1.0 - v + eps));
        e.values[i] = h < 0.0 ? 0.0 : h;  // eps can push the exact-0/1 case a hair negative
    }
    return e;
}

EntropyMap smooth_entropy(const EntropyMap& e, int k) {
    if (k < 1) throw std::invalid_argument("smooth_entropy: k must be >= 1");
    if (e.height < 1 || e.width < 1 ||
        e.values.size() != static_cast<size_t>(e.height) * static_cast<size_t>(e.width))
        throw std::invalid_argument("smooth_entropy: empty or inconsistent entropy map");
    EntropyMap out = e;
    out.smoothed = true;
    out.k = k;
    if (k == 1) return out;

    const int H = e.height, W = e.width;
    const int bh = (H + k - 1) / k, bw = (W + k - 1) / k;
    // symmetric edge padding: block (br,bc) averages clamped source pixels
    const int pad_top = (bh * k - H) / 2;
    const int pad_left = (bw * k - W) / 2;
    for (int br = 0; br < bh; ++br)
        for (int bc = 0; bc < bw; ++bc) {
            double sum = 0.0;
            for (int dr = 0; dr < k; ++dr)
                for (int dc = 0; dc < k; ++dc) {
                    int r = std::clamp(br * k + dr - pad_top, 0, H - 1);
                    int c = std::clamp(bc * k + dc - pad_left, 0, W - 1);
                    sum += e.at(r, c);
                }
            const double avg = sum / (static_cast<double>(k) * k);
            for (int dr = 0; dr < k; ++dr)
                for (int dc = 0; dc < k; ++dc) {
                    int r = br * k + dr - pad_top;
                    int c = bc * k + dc - pad_left;
                    if (r >= 0 && r < H && c >= 0 && c < W)
                        out.values[static_cast<size_t>(r) * W + c] = avg;
                }
        }
    return out;
}

ProbMap confidence_weights(const EntropyMap& e_smooth, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("confidence_weights: eps must be positive");
    ProbMap w;
    w.height = e_smooth.height;
    w.width = e_smooth.width;
    w.values.resize(e_smooth.values.size());
    for (size_t i = 0; i < w.values.size(); ++i) w.values[i] = 1.0 / (e_smooth.values[i] + eps);
    return w;
}

ProbMap fuse(const ProbMap& pa, const ProbMap& pb, const FusionConfig& cfg) {
    require_same_shape(pa.height, pa.width, pb.height, pb.width, "fuse");
    EntropyMap ea = pixel_entropy(pa, cfg.eps);
    EntropyMap eb = pixel_entropy(pb, cfg.eps);
    if (cfg.patchify) {
        ea = smooth_entropy(ea, cfg.k);
        eb = smooth_entropy(eb, cfg.k);
    }
    ProbMap wa = confidence_weights(ea, cfg.eps);
    ProbMap wb = confidence_weights(eb, cfg.eps);
    ProbMap out = make_probmap(pa.height, pa.width);
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = (wa.values[i] * pa.values[i] + wb.values[i] * pb.values[i]) /
                        (wa.values[i] + wb.values[i]);
    return out;
}

}  // namespace pseudoseg
