#pragma once

#include "pseudoseg/autodiff.hpp"
#include "pseudoseg/image.hpp"

namespace pseudoseg {

struct AurclConfig {
    double reverse_ratio = 0.2;  // r, fraction of pixels selected as low-confidence
    double tau_fix = 0.2;
    int patch_size = 14;
    double temperature = 0.1;
    double eps = 1e-8;
};

enum class FeatureView { original, reversed };

struct PatchFeatureSet {
    Tensor features;  // [N, D]
    FeatureView view = FeatureView::original;
};

// C = 1 - p
ProbMap confidence_map(const ProbMap& p);

// tau = max(K-th largest of C, tau_fix), K = round(r*H*W) clamped to [1, HW]
double adaptive_threshold(const ProbMap& c, double r, double tau_fix);

// 1 exactly where C >= tau
BinaryMask low_conf_mask(const ProbMap& c, double tau);

// inside M: 1 - p; outside: p
ProbMap reverse_probs(const ProbMap& p, const BinaryMask& m);

// Weight-normalized patch pooling of a [D,H,W] feature grid. Non-divisible
// dims are handled by symmetric edge replication, matching smooth_entropy.
PatchFeatureSet patch_features(const Tensor& feature_grid, const ProbMap& weights, int patch_size,
                               double eps, FeatureView view);

// InfoNCE over matched patch indices with cosine similarity; negatives are
// the other patches of the same image. Zero-norm features get similarity 0.
double aurcl_loss(const PatchFeatureSet& orig, const PatchFeatureSet& rev, double temperature,
                  double eps = 1e-8);

// ---- differentiable path used inside a training step ----

// p: [H*W]-numel node, mask constant; output same shape
ad::NodePtr reverse_node(ad::Tape& t, const ad::NodePtr& p, const BinaryMask& m);

// f: [D,H,W] node, w: node with numel H*W; output [N,D]
ad::NodePtr patch_features_node(ad::Tape& t, const ad::NodePtr& f, const ad::NodePtr& w,
                                int patch_size, double eps);

// f, g: [N,D] nodes; output scalar
ad::NodePtr infonce_node(ad::Tape& t, const ad::NodePtr& f, const ad::NodePtr& g,
                         double temperature, double eps = 1e-8);

}  // namespace pseudoseg
