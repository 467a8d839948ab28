#pragma once

#include "pseudoseg/image.hpp"

namespace pseudoseg {

struct MetricsRecord {
    double dice = 0.0;
    double iou = 0.0;
    double acc = 0.0;
    int n_images = 0;
};

// Overlap metrics. The empty-vs-empty case is defined as perfect agreement
// (1.0) so all-background images score cleanly instead of NaN.
double dice(const BinaryMask& pred, const BinaryMask& gt);
double iou(const BinaryMask& pred, const BinaryMask& gt);
double pixel_accuracy(const BinaryMask& pred, const BinaryMask& gt);

// pixel = 1 iff p >= threshold (ties map to foreground)
BinaryMask binarize(const ProbMap& p, double threshold = 0.5);

}  // namespace pseudoseg
