#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pseudoseg/aurcl.hpp"
#include "pseudoseg/backbone.hpp"
#include "pseudoseg/losses.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/splits.hpp"
#include "pseudoseg/uewf.hpp"

namespace pseudoseg {

struct Dataset {
    std::map<std::string, GrayscaleImage> images;
    std::map<std::string, BinaryMask> masks;  // ground truth where known

    const GrayscaleImage& image(const std::string& id) const;
    const BinaryMask& mask(const std::string& id) const;
    std::vector<std::string> ids() const;
};

struct TrainerConfig {
    int batch_size = 8;  // labeled and unlabeled halves are equal
    int epochs = 100;
    int warmup_epochs = 30;
    double lr = 1e-3;
    double ema_momentum = 0.995;
    LossWeights weights;
    FusionConfig fusion;
    AurclConfig aurcl;
    BackboneConfig backbone;
    PlateauScheduler scheduler;
    int64_t seed = 0;
    bool supervised_only = false;  // SupOnly baseline: no unlabeled usage at all
};

struct TrainerState {
    Backbone student;
    Backbone static_teacher;  // frozen throughout step 3
    Backbone ema_teacher;
    AdamOptimizer optimizer;
    int epoch = 0;
    TrainerConfig cfg;

    // Student starts from the warm-trained static teacher; the EMA teacher
    // starts equal to the student.
    static TrainerState init(const Backbone& warmed_teacher, const TrainerConfig& cfg);
};

struct StepResult {
    LossBreakdown losses;
    double tau_mean = 0.0;   // mean adaptive threshold over the unlabeled half
    double mask_frac = 0.0;  // mean fraction of reversed pixels
};

struct EpochRecord {
    int epoch = 0;
    double l_s = 0.0, l_u = 0.0, l_c = 0.0, total = 0.0;
    double val_dice = 0.0, val_iou = 0.0, val_acc = 0.0;
    double lr = 0.0;
    double tau_mean = 0.0, mask_frac = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    ParamSnapshot best_student;  // by validation Dice
    double best_val_dice = -1.0;
    int best_epoch = -1;
};

// Step 2: trains a fresh network on the filtered pseudo-label pairs with
// BCE+Dice and returns it frozen. Records the per-epoch mean training loss.
Backbone warmup_static_teacher(const Dataset& data,
                               const std::map<std::string, BinaryMask>& pseudo_masks,
                               const TrainerConfig& cfg,
                               std::vector<double>* epoch_losses = nullptr);

// One step-3 update in the spec'd order: supervised half, dual-teacher
// fusion on the unlabeled half, AURCL, one Adam step, EMA update.
StepResult train_step(TrainerState& state, const std::vector<std::string>& labeled_ids,
                      const std::vector<std::string>& unlabeled_ids, const Dataset& data);

// Pure supervised update (labeled half only); reference path for the
// lambda_u = lambda_c = 0 equivalence check.
StepResult supervised_step(TrainerState& state, const std::vector<std::string>& labeled_ids,
                           const Dataset& data);

MetricsRecord evaluate(const Backbone& model, const std::vector<std::string>& ids,
                       const Dataset& data, double threshold = 0.5);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(TrainerState& state, const SplitManifest& manifest, const Dataset& data,
                  const EpochCallback& on_epoch = nullptr);

// Full trainer checkpoint (student + EMA + optimizer + scheduler); resuming
// reproduces the uninterrupted run exactly under fixed seeds.
void save_trainer_checkpoint(const TrainerState& state, const TrainResult& partial,
                             const std::string& path);
void load_trainer_checkpoint(TrainerState& state, TrainResult& partial, const std::string& path);

}  // namespace pseudoseg
