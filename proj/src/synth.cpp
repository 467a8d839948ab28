#include "pseudoseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pseudoseg/rng.hpp"

namespace pseudoseg {

namespace {

struct Ellipse {
    double cx, cy, rx, ry, theta;

    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double ct = std::cos(theta), st = std::sin(theta);
        double u = (dx * ct + dy * st) / rx;
        double v = (-dx * st + dy * ct) / ry;
        return u * u + v * v <= 1.0;
    }
};

}  // namespace

const char* shape_name(LesionShape s) {
    switch (s) {
        case LesionShape::oval: return "oval";
        case LesionShape::round: return "round";
        case LesionShape::lobulated: return "lobulated";
    }
    return "oval";
}

LesionShape shape_from_name(const std::string& name) {
    if (name == "oval") return LesionShape::oval;
    if (name == "round") return LesionShape::round;
    if (name == "lobulated") return LesionShape::lobulated;
    throw std::invalid_argument("unknown lesion shape: " + name);
}

std::pair<GrayscaleImage, BinaryMask> generate_case(const SynthConfig& cfg, int index) {
    if (cfg.count < 1 || index < 0 || index >= cfg.count)
        throw std::invalid_argument("generate_case: index out of range");
    if (cfg.image_size < 32) throw std::invalid_argument("generate_case: image_size must be >= 32");
    if (cfg.lesion_darkness <= 0.0 || cfg.lesion_darkness >= 1.0)
        throw std::invalid_argument("generate_case: lesion_darkness must be in (0,1), lesion strictly darker");

    const int s = cfg.image_size;
    Rng rng(mix_seed(static_cast<uint64_t>(cfg.seed), static_cast<uint64_t>(index)));

    double background = rng.uniform(0.45, 0.80);
    double darkness = cfg.lesion_darkness + cfg.darkness_jitter * rng.uniform(-1.0, 1.0);
    darkness = std::clamp(darkness, 0.05, 0.92);

    LesionShape shape = cfg.lesion_shape;
    if (cfg.mixed_shapes) {
        LesionShape all[3] = {LesionShape::oval, LesionShape::round, LesionShape::lobulated};
        shape = all[rng.uniform_int(3)];
    }

    double cx = rng.uniform(0.30, 0.70) * s;
    double cy = rng.uniform(0.30, 0.70) * s;
    double base_r = rng.uniform(0.10, 0.24) * s;

    std::vector<Ellipse> lobes;
    switch (shape) {
        case LesionShape::round:
            lobes.push_back({cx, cy, base_r, base_r, 0.0});
            break;
        case LesionShape::oval: {
            double aspect = rng.uniform(1.4, 2.2);
            lobes.push_back({cx, cy, base_r * std::sqrt(aspect), base_r / std::sqrt(aspect),
                             rng.uniform(0.0, 3.14159265358979)});
            break;
        }
        case LesionShape::lobulated: {
            int n = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4 overlapping ellipses
            lobes.push_back({cx, cy, base_r, base_r * rng.uniform(0.7, 1.0),
                             rng.uniform(0.0, 3.14159265358979)});
            for (int i = 1; i < n; ++i) {
                double ang = rng.uniform(0.0, 6.2831853);
                double off = rng.uniform(0.4, 0.8) * base_r;
                double r2 = base_r * rng.uniform(0.5, 0.8);
                lobes.push_back({cx + off * std::cos(ang), cy + off * std::sin(ang), r2,
                                 r2 * rng.uniform(0.7, 1.0), rng.uniform(0.0, 3.14159265)});
            }
            break;
        }
    }

    GrayscaleImage img;
    img.height = img.width = s;
    img.pixels.assign(static_cast<size_t>(s) * s, background);
    BinaryMask mask = make_mask(s, s);

    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
            double x = c + 0.5, y = r + 0.5;
            for (const Ellipse& e : lobes)
                if (e.contains(x, y)) {
                    mask.at(r, c) = 1;
                    img.at(r, c) = background * darkness;
                    break;
                }
        }

    if (cfg.speckle_strength > 0.0) {
        for (double& v : img.pixels) {
            v *= 1.0 + cfg.speckle_strength * rng.normal();
            v = std::clamp(v, 0.0, 1.0);
        }
    }

    std::string id = "case_" + std::string(5 - std::to_string(index).size(), '0') + std::to_string(index);
    img.id = id;
    mask.id = id;
    return {std::move(img), std::move(mask)};
}

std::vector<ScoredBox> replay_propose_boxes(const BinaryMask& gt, const ReplayJitter& jitter,
                                            uint64_t seed) {
    Rng rng(seed);
    Box tight;
    if (!tight_bbox(gt, tight)) return {};
    if (jitter.dropout_rate > 0.0 && rng.bernoulli(jitter.dropout_rate)) return {};

    double w = tight.x1 - tight.x0 + 1;
    double h = tight.y1 - tight.y0 + 1;
    double cx = 0.5 * (tight.x0 + tight.x1);
    double cy = 0.5 * (tight.y0 + tight.y1);

    double u1 = rng.uniform(-1.0, 1.0), u2 = rng.uniform(-1.0, 1.0);
    double u3 = rng.uniform(-1.0, 1.0), u4 = rng.uniform(-1.0, 1.0);
    cx += u1 * jitter.box_center_jitter * w;
    cy += u2 * jitter.box_center_jitter * h;
    double w2 = w * (1.0 + u3 * jitter.box_scale_jitter);
    double h2 = h * (1.0 + u4 * jitter.box_scale_jitter);

    auto clampi = [&](double v, int hi) { return std::clamp(static_cast<int>(std::lround(v)), 0, hi); };
    Box b;
    b.x0 = clampi(cx - 0.5 * (w2 - 1.0), gt.width - 1);
    b.x1 = clampi(cx + 0.5 * (w2 - 1.0), gt.width - 1);
    b.y0 = clampi(cy - 0.5 * (h2 - 1.0), gt.height - 1);
    b.y1 = clampi(cy + 0.5 * (h2 - 1.0), gt.height - 1);
    if (b.x1 < b.x0) std::swap(b.x0, b.x1);
    if (b.y1 < b.y0) std::swap(b.y0, b.y1);

    double penalty = 0.5 * (std::abs(u1) + std::abs(u2)) * jitter.box_center_jitter +
                     0.5 * (std::abs(u3) + std::abs(u4)) * jitter.box_scale_jitter;
    double score = std::clamp(1.0 - penalty, 0.05, 1.0);

    std::vector<ScoredBox> out{{b, score}};

    // occasionally a low-score distractor, so box-selection policies get exercised
    if ((jitter.box_center_jitter > 0.0 || jitter.box_scale_jitter > 0.0) && rng.bernoulli(0.3)) {
        int dw = std::max(2, gt.width / 8), dh = std::max(2, gt.height / 8);
        int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(gt.width - dw)));
        int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(gt.height - dh)));
        out.push_back({Box{x0, y0, x0 + dw - 1, y0 + dh - 1}, rng.uniform(0.05, 0.4) * score});
    }
    return out;
}

BinaryMask replay_box_to_mask(const GrayscaleImage& image, const Box& box, const BinaryMask& gt,
                              const ReplayJitter& jitter, uint64_t seed) {
    require_same_shape(image.height, image.width, gt.height, gt.width, "replay_box_to_mask");
    Rng rng(seed);
    BinaryMask out = make_mask(gt.height, gt.width, gt.id);
    for (int r = 0; r < gt.height; ++r)
        for (int c = 0; c < gt.width; ++c)
            if (box.contains(c, r) && gt.at(r, c)) out.at(r, c) = 1;

    if (jitter.mask_boundary_noise > 0.0) {
        BinaryMask base = out;  // flips are decided against the unperturbed mask
        auto val = [&](int r, int c) -> int {
            if (r < 0 || c < 0 || r >= base.height || c >= base.width) return 0;
            return base.at(r, c);
        };
        for (int r = 0; r < gt.height; ++r)
            for (int c = 0; c < gt.width; ++c) {
                if (!box.contains(c, r)) continue;
                int v = base.at(r, c);
                bool boundary = val(r - 1, c) != v || val(r + 1, c) != v || val(r, c - 1) != v ||
                                val(r, c + 1) != v;
                if (boundary && rng.bernoulli(jitter.mask_boundary_noise))
                    out.at(r, c) = static_cast<uint8_t>(1 - v);
            }
    }
    return out;
}

}  // namespace pseudoseg
