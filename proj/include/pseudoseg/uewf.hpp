#pragma once

#include "pseudoseg/image.hpp"

namespace pseudoseg {

struct EntropyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    bool smoothed = false;
    int k = 14;

    double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
};

struct FusionConfig {
    int k = 14;
    double eps = 1e-8;
    bool patchify = true;
};

// Binary Shannon entropy of the sigmoid posterior, per pixel:
// H = -[p ln(p+eps) + (1-p) ln(1-p+eps)]
EntropyMap pixel_entropy(const ProbMap& p, double eps = 1e-8);

// Non-overlapping k x k average pooling followed by nearest-neighbor
// upsampling back to H x W. Non-divisible dims are edge-padded symmetrically
// before pooling; output is block-constant either way.
EntropyMap smooth_entropy(const EntropyMap& e, int k);

// w = 1 / (E_smooth + eps)
ProbMap confidence_weights(const EntropyMap& e_smooth, double eps = 1e-8);

// Uncertainty-weighted average of the two teachers' soft labels. With
// patchify=false the entropy maps are used unsmoothed (ablation path).
ProbMap fuse(const ProbMap& pa, const ProbMap& pb, const FusionConfig& cfg);

}  // namespace pseudoseg
