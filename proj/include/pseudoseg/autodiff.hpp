#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pseudoseg/tensor.hpp"

namespace pseudoseg::ad {

class Tape;

// One node of the dynamically built computation graph. backward_fn reads
// this node's grad and accumulates into the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

using NodePtr = std::shared_ptr<Node>;

class Tape {
public:
    // Leaf with gradient tracking (parameters, probed inputs).
    NodePtr leaf(Tensor value);
    // Constant without gradient (targets, detached teacher outputs).
    NodePtr constant(Tensor value);
    NodePtr make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> bw);

    // Reverse sweep from a scalar root (numel 1). Grads accumulate; leaves
    // keep theirs for the caller to read.
    void backward(const NodePtr& root);

    size_t size() const { return nodes_.size(); }

private:
    std::vector<NodePtr> nodes_;
};

// ---- tensor ops (NCHW layouts where spatial) ----

// 2D convolution, stride 1, zero padding k/2 (shape preserving, odd k).
// x: [B,C,H,W], w: [OC,C,k,k], b: [OC] -> [B,OC,H,W]
NodePtr conv2d(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b);

// Per-sample, per-group normalization with channel affine params.
NodePtr group_norm(Tape& t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   int groups, double eps = 1e-5);

NodePtr relu(Tape& t, const NodePtr& x);
NodePtr sigmoid(Tape& t, const NodePtr& x);
NodePtr avg_pool2(Tape& t, const NodePtr& x);      // 2x2 window, stride 2
NodePtr upsample2(Tape& t, const NodePtr& x);      // nearest neighbor 2x
NodePtr concat_channels(Tape& t, const NodePtr& a, const NodePtr& b);

// Extracts sample b of a batched tensor [B,C,H,W] -> [C,H,W].
NodePtr select_sample(Tape& t, const NodePtr& x, int b);

// ---- scalar combinators ----
NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b);
NodePtr scale(Tape& t, const NodePtr& a, double k);

// ---- plain (no-grad) kernels shared by the ops and eval-mode forward ----
namespace kernels {
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor group_norm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                      double eps);
Tensor relu_fwd(const Tensor& x);
Tensor sigmoid_fwd(const Tensor& x);
Tensor avg_pool2_fwd(const Tensor& x);
Tensor upsample2_fwd(const Tensor& x);
Tensor concat_channels_fwd(const Tensor& a, const Tensor& b);
}  // namespace kernels

}  // namespace pseudoseg::ad
