#pragma once

#include "pseudoseg/autodiff.hpp"
#include "pseudoseg/image.hpp"

namespace pseudoseg {

struct LossWeights {
    double lambda_u = 1.0;
    double lambda_c = 0.5;
};

struct LossBreakdown {
    double l_s = 0.0;
    double l_u = 0.0;
    double l_c = 0.0;
    double total = 0.0;
};

constexpr double kBceClamp = 1e-7;   // inside the logs
constexpr double kDiceSmooth = 1.0;  // soft Dice smoothing

// Plain scalar evaluations (targets may be soft).
double bce_loss(const ProbMap& p, const ProbMap& target);
double dice_loss(const ProbMap& p, const ProbMap& target);
double seg_loss(const ProbMap& p, const ProbMap& target);  // BCE + Dice, 1:1

LossBreakdown total_loss(double l_s, double l_u, double l_c, const LossWeights& w);

// Differentiable versions over tape nodes; the target is a constant tensor
// of the same numel as p. Sums/means pool over all elements, so a batched
// [B,1,H,W] prediction trains against a stacked target in one node.
ad::NodePtr bce_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target);
ad::NodePtr dice_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target);
ad::NodePtr seg_node(ad::Tape& t, const ad::NodePtr& p, const Tensor& target);

}  // namespace pseudoseg
