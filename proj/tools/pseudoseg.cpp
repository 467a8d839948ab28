#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "pseudoseg/cli.hpp"
#include <CLI11.hpp>

using pseudoseg::cli::RunConfig;

namespace {

void add_common(CLI::App* sub, std::string& config_path, std::vector<std::string>& overrides) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "key=value config override (repeatable)");
}

RunConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : pseudoseg::cli::load_config(config_path);
    for (const auto& o : overrides) pseudoseg::cli::apply_override(cfg, o);
    pseudoseg::cli::apply_env_seed(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised breast-ultrasound segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string checkpoint;
    std::string split = "test";

    // flags shared by all subcommands, plus a few ergonomic aliases that map
    // onto config keys
    std::string data_dir, cache_dir, out_dir, backend, prompt_key, policy;
    long long seed = -1;
    double labeled_ratio = -1.0;
    int epochs = -1, count = -1;

    auto wire = [&](CLI::App* sub) {
        add_common(sub, config_path, overrides);
        sub->add_option("--data", data_dir, "dataset directory");
        sub->add_option("--cache", cache_dir, "pseudo-label cache directory");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "RNG seed");
        return sub;
    };

    auto* synth = wire(app.add_subcommand("synth", "generate the synthetic dataset"));
    synth->add_option("--count", count, "number of cases");

    auto* appg = wire(app.add_subcommand("appg", "appearance-prompted pseudo-label generation"));
    appg->add_option("--backend", backend, "replay|live");
    appg->add_option("--prompt-key", prompt_key, "trait registry key");
    appg->add_option("--policy", policy, "highest_score|union_all");

    wire(app.add_subcommand("filter", "validity-filter the pseudo-label cache"));
    wire(app.add_subcommand("warmup", "warm-train the static teacher"));
    auto* train = wire(app.add_subcommand("train", "dual-teacher semi-supervised training"));
    train->add_option("--labeled-ratio", labeled_ratio, "labeled fraction of the train pool");
    train->add_option("--epochs", epochs, "training epochs");

    auto* eval = wire(app.add_subcommand("eval", "evaluate a checkpoint"));
    eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval->add_option("--split", split, "test|val|labeled|unlabeled");

    auto* overlay = wire(app.add_subcommand("overlay", "export prediction/GT overlay PNGs"));
    overlay->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve(config_path, overrides);
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed >= 0) cfg.seed = seed;
        if (!backend.empty()) cfg.backend = backend;
        if (!prompt_key.empty()) cfg.prompt_key = prompt_key;
        if (!policy.empty()) cfg.policy = policy;
        if (labeled_ratio > 0.0) cfg.labeled_ratio = labeled_ratio;
        if (epochs >= 0) cfg.epochs = epochs;
        if (count >= 0) cfg.count = count;
        pseudoseg::cli::apply_env_seed(cfg);

        if (app.got_subcommand("synth")) {
            pseudoseg::cli::cmd_synth(cfg);
        } else if (app.got_subcommand("appg")) {
            pseudoseg::cli::cmd_appg(cfg);
        } else if (app.got_subcommand("filter")) {
            pseudoseg::cli::cmd_filter(cfg);
        } else if (app.got_subcommand("warmup")) {
            pseudoseg::cli::cmd_warmup(cfg);
        } else if (app.got_subcommand("train")) {
            pseudoseg::cli::cmd_train(cfg);
        } else if (app.got_subcommand("eval")) {
            auto rec = pseudoseg::cli::cmd_eval(cfg, checkpoint, split);
            std::printf("{\"dice\": %.6f, \"iou\": %.6f, \"acc\": %.6f, \"n_images\": %d}\n",
                        rec.dice, rec.iou, rec.acc, rec.n_images);
        } else if (app.got_subcommand("overlay")) {
            pseudoseg::cli::cmd_overlay(cfg, checkpoint);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
