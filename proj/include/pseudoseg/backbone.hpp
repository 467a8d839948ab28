#pragma once

#include <map>
#include <string>
#include <vector>

#include "pseudoseg/autodiff.hpp"
#include "pseudoseg/image.hpp"

namespace pseudoseg {

struct BackboneConfig {
    int in_channels = 1;
    int c1 = 8;   // full-resolution width; also the AURCL feature depth
    int c2 = 16;
    int c3 = 32;
    int groups = 4;
    int64_t init_seed = 0;

    bool operator==(const BackboneConfig&) const = default;
};

using ParamSnapshot = std::map<std::string, Tensor>;

struct ForwardNodes {
    ad::NodePtr logits;    // [B,1,H,W]
    ad::NodePtr probs;     // sigmoid(logits)
    ad::NodePtr features;  // [B,c1,H,W], decoder output before the head
    std::map<std::string, ad::NodePtr> params;
};

// Three-level encoder-decoder with skip connections and group norm (no
// batch statistics, so eval outputs are batch-size independent).
class Backbone {
public:
    explicit Backbone(const BackboneConfig& cfg);

    const BackboneConfig& config() const { return cfg_; }

    // Gradient-tracked forward; input H and W must be divisible by 4.
    ForwardNodes forward_train(ad::Tape& tape, const Tensor& batch) const;

    // Same, but reusing already-created parameter leaves so several forwards
    // on one tape share gradients.
    ForwardNodes forward_with(ad::Tape& tape, const Tensor& batch,
                              const std::map<std::string, ad::NodePtr>& param_nodes) const;

    // Plain forward: logits and features, no graph.
    std::pair<Tensor, Tensor> forward_eval(const Tensor& batch) const;

    ProbMap predict(const GrayscaleImage& image) const;

    ParamSnapshot snapshot() const { return params_; }
    void restore(const ParamSnapshot& snap);

    std::map<std::string, Tensor>& parameters() { return params_; }
    const std::map<std::string, Tensor>& parameters() const { return params_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool f) { frozen_ = f; }

    // Stable digest of all parameter bytes (frozen-teacher assertions).
    uint64_t param_hash() const;

private:
    BackboneConfig cfg_;
    std::map<std::string, Tensor> params_;
    bool frozen_ = false;
};

// theta_T <- m * theta_T + (1 - m) * theta_S, elementwise
void ema_update(Backbone& teacher, const Backbone& student, double momentum);

struct PlateauScheduler {
    double factor = 0.5;
    int patience = 10;
    double min_lr = 1e-6;
    double best = -1e300;  // max mode (validation Dice)
    int bad_epochs = 0;

    // returns true if the learning rate was reduced
    bool step(double metric, double& lr);
};

class AdamOptimizer {
public:
    AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // applies one step from the grads accumulated in the forward's param nodes
    void step(Backbone& model, const std::map<std::string, ad::NodePtr>& param_nodes);

    double& lr() { return lr_; }
    double lr() const { return lr_; }
    int64_t step_count() const { return step_count_; }

    // serialization hooks for checkpoint resume
    std::map<std::string, Tensor>& moment1() { return m_; }
    std::map<std::string, Tensor>& moment2() { return v_; }
    void set_step_count(int64_t n) { step_count_ = n; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Named-array archive with a JSON header; used for model checkpoints.
void save_archive(const std::string& path, const std::string& header_json,
                  const std::map<std::string, Tensor>& arrays);
std::pair<std::string, std::map<std::string, Tensor>> load_archive(const std::string& path);

void save_backbone(const Backbone& model, const std::string& path, int epoch,
                   const std::vector<double>& metric_history);
Backbone load_backbone(const std::string& path, int* epoch = nullptr,
                       std::vector<double>* metric_history = nullptr);

}  // namespace pseudoseg
