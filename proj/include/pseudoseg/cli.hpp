#pragma once

#include <map>
#include <string>

#include "pseudoseg/synth.hpp"
#include "pseudoseg/trainer.hpp"

namespace pseudoseg::cli {

// Flat run configuration. Precedence: command-line overrides > config file >
// defaults; PSEUDOSEG_SEED (when set) overrides the seed for CI runs.
struct RunConfig {
    std::string data_dir = "data";
    std::string cache_dir = "cache";
    std::string out_dir = "out";
    int64_t seed = 0;

    // synth
    int image_size = 64;
    int count = 100;
    std::string lesion_shape = "mixed";  // oval|round|lobulated|mixed
    double lesion_darkness = 0.55;
    double darkness_jitter = 0.25;
    double speckle_strength = 0.5;

    // appg / replay backends
    std::string backend = "replay";
    std::string prompt_key = "breast_ultrasound";
    std::string policy = "highest_score";
    double box_center_jitter = 0.0;
    double box_scale_jitter = 0.0;
    double mask_boundary_noise = 0.0;
    double dropout_rate = 0.0;
    double area_tau = 0.01;

    // training
    double labeled_ratio = 0.1;
    int batch_size = 8;
    int epochs = 100;
    int warmup_epochs = 30;
    double lr = 1e-3;
    double ema_momentum = 0.995;
    double lambda_u = 1.0;
    double lambda_c = 0.5;
    bool supervised_only = false;
    double sched_factor = 0.5;
    int sched_patience = 10;

    // fusion
    int fusion_k = 14;
    double fusion_eps = 1e-8;
    bool patchify = true;

    // aurcl
    double reverse_ratio = 0.2;
    double tau_fix = 0.2;
    int patch_size = 14;
    double temperature = 0.1;
    double aurcl_eps = 1e-8;

    // backbone
    int c1 = 8;
    int c2 = 16;
    int c3 = 32;
    int groups = 4;

    TrainerConfig trainer_config() const;
    ReplayJitter jitter() const;
};

RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

// "key=value" override with the JSON key names; unknown keys are an error.
void apply_override(RunConfig& cfg, const std::string& assignment);

void apply_env_seed(RunConfig& cfg);

// Subcommand bodies; each writes its outputs plus a resolved-config JSON,
// and is idempotent for identical inputs and seeds.
void cmd_synth(const RunConfig& cfg);
void cmd_appg(const RunConfig& cfg);
void cmd_filter(const RunConfig& cfg);
void cmd_warmup(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
MetricsRecord cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& split = "test");
void cmd_overlay(const RunConfig& cfg, const std::string& checkpoint);

// Shared loaders.
Dataset load_dataset(const std::string& data_dir);
std::vector<std::string> dataset_ids(const std::string& data_dir);

}  // namespace pseudoseg::cli
