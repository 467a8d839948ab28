#include "pseudoseg/metrics.hpp"

namespace pseudoseg {

namespace {
struct Counts {
    size_t inter = 0, p = 0, g = 0, agree = 0, n = 0;
};

Counts count(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_shape(pred.height, pred.width, gt.height, gt.width, "metrics");
    Counts c;
    c.n = pred.pixels.size();
    for (size_t i = 0; i < c.n; ++i) {
        uint8_t pv = pred.pixels[i], gv = gt.pixels[i];
        c.p += pv;
        c.g += gv;
        c.inter += pv & gv;
        c.agree += (pv == gv);
    }
    return c;
}
}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    Counts c = count(pred, gt);
    if (c.p + c.g == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.p + c.g);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    Counts c = count(pred, gt);
    size_t uni = c.p + c.g - c.inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double pixel_accuracy(const BinaryMask& pred, const BinaryMask& gt) {
    Counts c = count(pred, gt);
    return static_cast<double>(c.agree) / static_cast<double>(c.n);
}

BinaryMask binarize(const ProbMap& p, double threshold) {
    BinaryMask m = make_mask(p.height, p.width);
    for (size_t i = 0; i < p.values.size(); ++i) m.pixels[i] = p.values[i] >= threshold ? 1 : 0;
    return m;
}

}  // namespace pseudoseg
