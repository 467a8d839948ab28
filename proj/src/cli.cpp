#include "pseudoseg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "pseudoseg/appg.hpp"
#include "pseudoseg/pngio.hpp"
#include "pseudoseg/rng.hpp"
#include <json.hpp>

namespace fs = std::filesystem;

namespace pseudoseg::cli {

namespace {

nlohmann::json to_json_obj(const RunConfig& c) {
    return {
        {"data_dir", c.data_dir},
        {"cache_dir", c.cache_dir},
        {"out_dir", c.out_dir},
        {"seed", c.seed},
        {"image_size", c.image_size},
        {"count", c.count},
        {"lesion_shape", c.lesion_shape},
        {"lesion_darkness", c.lesion_darkness},
        {"darkness_jitter", c.darkness_jitter},
        {"speckle_strength", c.speckle_strength},
        {"backend", c.backend},
        {"prompt_key", c.prompt_key},
        {"policy", c.policy},
        {"box_center_jitter", c.box_center_jitter},
        {"box_scale_jitter", c.box_scale_jitter},
        {"mask_boundary_noise", c.mask_boundary_noise},
        {"dropout_rate", c.dropout_rate},
        {"area_tau", c.area_tau},
        {"labeled_ratio", c.labeled_ratio},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"warmup_epochs", c.warmup_epochs},
        {"lr", c.lr},
        {"ema_momentum", c.ema_momentum},
        {"lambda_u", c.lambda_u},
        {"lambda_c", c.lambda_c},
        {"supervised_only", c.supervised_only},
        {"sched_factor", c.sched_factor},
        {"sched_patience", c.sched_patience},
        {"fusion_k", c.fusion_k},
        {"fusion_eps", c.fusion_eps},
        {"patchify", c.patchify},
        {"reverse_ratio", c.reverse_ratio},
        {"tau_fix", c.tau_fix},
        {"patch_size", c.patch_size},
        {"temperature", c.temperature},
        {"aurcl_eps", c.aurcl_eps},
        {"c1", c.c1},
        {"c2", c.c2},
        {"c3", c.c3},
        {"groups", c.groups},
    };
}

void set_field(RunConfig& c, const std::string& key, const nlohmann::json& v) {
    if (key == "data_dir") c.data_dir = v.get<std::string>();
    else if (key == "cache_dir") c.cache_dir = v.get<std::string>();
    else if (key == "out_dir") c.out_dir = v.get<std::string>();
    else if (key == "seed") c.seed = v.get<int64_t>();
    else if (key == "image_size") c.image_size = v.get<int>();
    else if (key == "count") c.count = v.get<int>();
    else if (key == "lesion_shape") c.lesion_shape = v.get<std::string>();
    else if (key == "lesion_darkness") c.lesion_darkness = v.get<double>();
    else if (key == "darkness_jitter") c.darkness_jitter = v.get<double>();
    else if (key == "speckle_strength") c.speckle_strength = v.get<double>();
    else if (key == "backend") c.backend = v.get<std::string>();
    else if (key == "prompt_key") c.prompt_key = v.get<std::string>();
    else if (key == "policy") c.policy = v.get<std::string>();
    else if (key == "box_center_jitter") c.box_center_jitter = v.get<double>();
    else if (key == "box_scale_jitter") c.box_scale_jitter = v.get<double>();
    else if (key == "mask_boundary_noise") c.mask_boundary_noise = v.get<double>();
    else if (key == "dropout_rate") c.dropout_rate = v.get<double>();
    else if (key == "area_tau") c.area_tau = v.get<double>();
    else if (key == "labeled_ratio") c.labeled_ratio = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "warmup_epochs") c.warmup_epochs = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "ema_momentum") c.ema_momentum = v.get<double>();
    else if (key == "lambda_u") c.lambda_u = v.get<double>();
    else if (key == "lambda_c") c.lambda_c = v.get<double>();
    else if (key == "supervised_only") c.supervised_only = v.get<bool>();
    else if (key == "sched_factor") c.sched_factor = v.get<double>();
    else if (key == "sched_patience") c.sched_patience = v.get<int>();
    else if (key == "fusion_k") c.fusion_k = v.get<int>();
    else if (key == "fusion_eps") c.fusion_eps = v.get<double>();
    else if (key == "patchify") c.patchify = v.get<bool>();
    else if (key == "reverse_ratio") c.reverse_ratio = v.get<double>();
    else if (key == "tau_fix") c.tau_fix = v.get<double>();
    else if (key == "patch_size") c.patch_size = v.get<int>();
    else if (key == "temperature") c.temperature = v.get<double>();
    else if (key == "aurcl_eps") c.aurcl_eps = v.get<double>();
    else if (key == "c1") c.c1 = v.get<int>();
    else if (key == "c2") c.c2 = v.get<int>();
    else if (key == "c3") c.c3 = v.get<int>();
    else if (key == "groups") c.groups = v.get<int>();
    else throw std::invalid_argument("unknown config key: " + key);
}

void validate(const RunConfig& c) {
    if (c.image_size < 32 || c.image_size % 4)
        throw std::invalid_argument("config: image_size must be >= 32 and divisible by 4");
    if (c.count < 1) throw std::invalid_argument("config: count must be >= 1");
    if (c.lesion_darkness <= 0.0 || c.lesion_darkness >= 1.0)
        throw std::invalid_argument("config: lesion_darkness must be in (0,1)");
    if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
        throw std::invalid_argument("config: dropout_rate must be in [0,1)");
    if (c.labeled_ratio <= 0.0 || c.labeled_ratio > 1.0)
        throw std::invalid_argument("config: labeled_ratio must be in (0,1]");
    if (c.reverse_ratio <= 0.0 || c.reverse_ratio >= 1.0)
        throw std::invalid_argument("config: reverse_ratio must be in (0,1)");
    if (c.tau_fix <= 0.0 || c.tau_fix >= 1.0)
        throw std::invalid_argument("config: tau_fix must be in (0,1)");
    if (c.temperature <= 0.0) throw std::invalid_argument("config: temperature must be positive");
    if (c.lambda_u < 0.0 || c.lambda_c < 0.0)
        throw std::invalid_argument("config: loss weights must be non-negative");
    if (c.fusion_k < 1 || c.patch_size < 1)
        throw std::invalid_argument("config: fusion_k and patch_size must be >= 1");
    if (c.batch_size < 2 || c.batch_size % 2)
        throw std::invalid_argument("config: batch_size must be even and >= 2");
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir, const std::string& cmd) {
    write_text(fs::path(dir) / (cmd + "_resolved_config.json"), config_to_json(cfg) + "\n");
}

void require_exists(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw std::runtime_error("missing " + p.string() + " (produce it with the '" + producer +
                                 "' subcommand)");
}

std::vector<uint8_t> to_u8(const std::vector<double>& v) {
    std::vector<uint8_t> out(v.size());
    for (size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
    return out;
}

std::map<std::string, BinaryMask> load_gt_masks(const std::string& data_dir) {
    std::map<std::string, BinaryMask> out;
    for (const auto& id : dataset_ids(data_dir)) {
        int h = 0, w = 0;
        std::vector<uint8_t> raw;
        png::read_gray((fs::path(data_dir) / "masks" / (id + ".png")).string(), h, w, raw);
        BinaryMask m = make_mask(h, w, id);
        for (size_t i = 0; i < raw.size(); ++i) m.pixels[i] = raw[i] >= 128 ? 1 : 0;
        out[id] = std::move(m);
    }
    return out;
}

}  // namespace

TrainerConfig RunConfig::trainer_config() const {
    TrainerConfig t;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.warmup_epochs = warmup_epochs;
    t.lr = lr;
    t.ema_momentum = ema_momentum;
    t.weights = {lambda_u, lambda_c};
    t.fusion = {fusion_k, fusion_eps, patchify};
    t.aurcl = {reverse_ratio, tau_fix, patch_size, temperature, aurcl_eps};
    t.backbone = {1, c1, c2, c3, groups, seed};
    t.scheduler.factor = sched_factor;
    t.scheduler.patience = sched_patience;
    t.seed = seed;
    t.supervised_only = supervised_only;
    return t;
}

ReplayJitter RunConfig::jitter() const {
    return {box_center_jitter, box_scale_jitter, mask_boundary_noise, dropout_rate};
}

RunConfig config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) set_field(c, key, value);
    validate(c);
    return c;
}

std::string config_to_json(const RunConfig& cfg) { return to_json_obj(cfg).dump(2); }

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    auto pos = assignment.find('=');
    if (pos == std::string::npos)
        throw std::invalid_argument("override must be key=value, got: " + assignment);
    std::string key = assignment.substr(0, pos);
    std::string raw = assignment.substr(pos + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;  // bare strings
    set_field(cfg, key, v);
    validate(cfg);
}

void apply_env_seed(RunConfig& cfg) {
    if (const char* s = std::getenv("PSEUDOSEG_SEED")) cfg.seed = std::stoll(s);
}

Dataset load_dataset(const std::string& data_dir) {
    Dataset d;
    for (const auto& id : dataset_ids(data_dir)) {
        int h = 0, w = 0;
        std::vector<uint8_t> raw;
        png::read_gray((fs::path(data_dir) / "images" / (id + ".png")).string(), h, w, raw);
        GrayscaleImage img;
        img.height = h;
        img.width = w;
        img.id = id;
        img.pixels.resize(raw.size());
        for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
        d.images[id] = std::move(img);
    }
    d.masks = load_gt_masks(data_dir);
    return d;
}

std::vector<std::string> dataset_ids(const std::string& data_dir) {
    fs::path manifest = fs::path(data_dir) / "dataset.json";
    require_exists(manifest, "synth");
    std::ifstream f(manifest);
    nlohmann::json j = nlohmann::json::parse(f);
    return j.at("ids").get<std::vector<std::string>>();
}

void cmd_synth(const RunConfig& cfg) {
    SynthConfig sc;
    sc.image_size = cfg.image_size;
    sc.mixed_shapes = cfg.lesion_shape == "mixed";
    if (!sc.mixed_shapes) sc.lesion_shape = shape_from_name(cfg.lesion_shape);
    sc.lesion_darkness = cfg.lesion_darkness;
    sc.darkness_jitter = cfg.darkness_jitter;
    sc.speckle_strength = cfg.speckle_strength;
    sc.seed = cfg.seed;
    sc.count = cfg.count;

    fs::create_directories(fs::path(cfg.data_dir) / "images");
    fs::create_directories(fs::path(cfg.data_dir) / "masks");
    std::vector<std::string> ids;
    for (int i = 0; i < cfg.count; ++i) {
        auto [img, mask] = generate_case(sc, i);
        png::write_gray((fs::path(cfg.data_dir) / "images" / (img.id + ".png")).string(),
                        img.height, img.width, to_u8(img.pixels));
        std::vector<uint8_t> mraw(mask.pixels.size());
        for (size_t k = 0; k < mraw.size(); ++k) mraw[k] = mask.pixels[k] ? 255 : 0;
        png::write_gray((fs::path(cfg.data_dir) / "masks" / (mask.id + ".png")).string(),
                        mask.height, mask.width, mraw);
        ids.push_back(img.id);
    }
    nlohmann::json j;
    j["ids"] = ids;
    j["image_size"] = cfg.image_size;
    j["seed"] = cfg.seed;
    write_text(fs::path(cfg.data_dir) / "dataset.json", j.dump(2) + "\n");
    write_resolved_config(cfg, cfg.data_dir, "synth");
}

void cmd_appg(const RunConfig& cfg) {
    if (cfg.backend != "replay")
        throw std::runtime_error("backend '" + cfg.backend +
                                 "' is not available in this build; use 'replay' (live adapters "
                                 "implement BoxProposerBackend/MaskGeneratorBackend)");
    Dataset data = load_dataset(cfg.data_dir);
    auto gt = data.masks;
    ReplayBoxProposer proposer(gt, cfg.jitter(), static_cast<uint64_t>(cfg.seed));
    ReplayMaskGenerator masker(gt, cfg.jitter(), static_cast<uint64_t>(cfg.seed));
    AppearancePrompt prompt = compose_prompt(TraitRegistry::builtin(), cfg.prompt_key);

    std::vector<GrayscaleImage> images;
    for (const auto& id : dataset_ids(cfg.data_dir)) images.push_back(data.image(id));
    build_cache(images, prompt, proposer, masker, policy_from_name(cfg.policy), cfg.cache_dir,
                cfg.area_tau);
    write_resolved_config(cfg, cfg.cache_dir, "appg");
}

void cmd_filter(const RunConfig& cfg) {
    require_exists(fs::path(cfg.cache_dir) / "manifest.json", "appg");
    CacheManifest mf = load_cache_manifest(cfg.cache_dir);
    // re-apply the area rule over the cached records
    std::vector<std::string> valid_ids;
    int dropped = 0;
    for (const auto& r : mf.records) {
        bool has_mask = fs::exists(fs::path(cfg.cache_dir) / "masks" / (r.image_id + ".png"));
        if (has_mask && r.area_fraction > cfg.area_tau) valid_ids.push_back(r.image_id);
        else ++dropped;
    }
    nlohmann::json j;
    j["valid_ids"] = valid_ids;
    j["n_valid"] = valid_ids.size();
    j["n_dropped"] = dropped;
    j["area_tau"] = cfg.area_tau;
    write_text(fs::path(cfg.cache_dir) / "filtered.json", j.dump(2) + "\n");
    write_resolved_config(cfg, cfg.cache_dir, "filter");
}

namespace {

std::map<std::string, BinaryMask> load_valid_pseudo_masks(const RunConfig& cfg) {
    fs::path filtered = fs::path(cfg.cache_dir) / "filtered.json";
    require_exists(filtered, "filter");
    std::ifstream f(filtered);
    nlohmann::json j = nlohmann::json::parse(f);
    std::map<std::string, BinaryMask> out;
    for (const auto& id : j.at("valid_ids").get<std::vector<std::string>>())
        out[id] = load_cache_mask(cfg.cache_dir, id);
    return out;
}

}  // namespace

void cmd_warmup(const RunConfig& cfg) {
    Dataset data = load_dataset(cfg.data_dir);
    auto pseudo = load_valid_pseudo_masks(cfg);

    // warm-up trains only on unlabeled-pool images; keep val/test untouched
    SplitManifest manifest = make_splits(dataset_ids(cfg.data_dir), cfg.labeled_ratio, cfg.seed);
    std::map<std::string, BinaryMask> train_pseudo;
    for (const auto& id : manifest.unlabeled_ids)
        if (auto it = pseudo.find(id); it != pseudo.end()) train_pseudo[id] = it->second;

    std::vector<double> losses;
    Backbone teacher = warmup_static_teacher(data, train_pseudo, cfg.trainer_config(), &losses);
    fs::create_directories(cfg.out_dir);
    save_backbone(teacher, (fs::path(cfg.out_dir) / "static_teacher.ckpt").string(),
                  cfg.warmup_epochs, losses);
    nlohmann::json j;
    j["epoch_losses"] = losses;
    j["n_train"] = train_pseudo.size();
    write_text(fs::path(cfg.out_dir) / "warmup_losses.json", j.dump(2) + "\n");
    write_resolved_config(cfg, cfg.out_dir, "warmup");
}

void cmd_train(const RunConfig& cfg) {
    Dataset data = load_dataset(cfg.data_dir);
    fs::path teacher_path = fs::path(cfg.out_dir) / "static_teacher.ckpt";
    require_exists(teacher_path, "warmup");
    Backbone teacher = load_backbone(teacher_path.string());
    teacher.set_frozen(true);

    SplitManifest manifest = make_splits(dataset_ids(cfg.data_dir), cfg.labeled_ratio, cfg.seed);
    fs::create_directories(cfg.out_dir);
    save_manifest(manifest, (fs::path(cfg.out_dir) / "splits.json").string());

    TrainerState state = TrainerState::init(teacher, cfg.trainer_config());
    std::string metrics_text;
    TrainResult result = train(state, manifest, data, [&](const EpochRecord& r) {
        nlohmann::json j = {{"epoch", r.epoch},       {"l_s", r.l_s},
                            {"l_u", r.l_u},           {"l_c", r.l_c},
                            {"total", r.total},       {"val_dice", r.val_dice},
                            {"val_iou", r.val_iou},   {"val_acc", r.val_acc},
                            {"lr", r.lr},             {"tau_mean", r.tau_mean},
                            {"mask_frac", r.mask_frac}};
        metrics_text += j.dump() + "\n";
    });
    write_text(fs::path(cfg.out_dir) / "metrics.jsonl", metrics_text);

    Backbone best(state.student.config());
    best.restore(result.best_student);
    save_backbone(best, (fs::path(cfg.out_dir) / "best.ckpt").string(), result.best_epoch, {});
    save_trainer_checkpoint(state, result, (fs::path(cfg.out_dir) / "trainer.ckpt").string());

    MetricsRecord test = evaluate(best, manifest.test_ids, data);
    nlohmann::json j = {{"dice", test.dice}, {"iou", test.iou}, {"acc", test.acc},
                        {"n_images", test.n_images}, {"best_epoch", result.best_epoch},
                        {"best_val_dice", result.best_val_dice}};
    write_text(fs::path(cfg.out_dir) / "test_metrics.json", j.dump(2) + "\n");
    write_resolved_config(cfg, cfg.out_dir, "train");
}

MetricsRecord cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& split) {
    require_exists(checkpoint, "train");
    Dataset data = load_dataset(cfg.data_dir);
    Backbone model = load_backbone(checkpoint);
    SplitManifest manifest = make_splits(dataset_ids(cfg.data_dir), cfg.labeled_ratio, cfg.seed);
    const std::vector<std::string>* ids = nullptr;
    if (split == "test") ids = &manifest.test_ids;
    else if (split == "val") ids = &manifest.val_ids;
    else if (split == "labeled") ids = &manifest.labeled_ids;
    else if (split == "unlabeled") ids = &manifest.unlabeled_ids;
    else throw std::invalid_argument("cmd_eval: unknown split " + split);
    MetricsRecord rec = evaluate(model, *ids, data);
    fs::create_directories(cfg.out_dir);
    nlohmann::json j = {{"dice", rec.dice}, {"iou", rec.iou}, {"acc", rec.acc},
                        {"n_images", rec.n_images}, {"split", split}};
    write_text(fs::path(cfg.out_dir) / ("eval_" + split + ".json"), j.dump(2) + "\n");
    write_resolved_config(cfg, cfg.out_dir, "eval");
    return rec;
}

void cmd_overlay(const RunConfig& cfg, const std::string& checkpoint) {
    require_exists(checkpoint, "train");
    Dataset data = load_dataset(cfg.data_dir);
    Backbone model = load_backbone(checkpoint);
    SplitManifest manifest = make_splits(dataset_ids(cfg.data_dir), cfg.labeled_ratio, cfg.seed);
    fs::path dir = fs::path(cfg.out_dir) / "overlays";
    fs::create_directories(dir);
    for (const auto& id : manifest.test_ids) {
        const GrayscaleImage& img = data.image(id);
        const BinaryMask& gt = data.mask(id);
        BinaryMask pred = binarize(model.predict(img), 0.5);
        std::vector<uint8_t> rgb(static_cast<size_t>(img.height) * img.width * 3);
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            uint8_t g = static_cast<uint8_t>(std::lround(img.pixels[i] * 255.0));
            uint8_t r8 = g, g8 = g, b8 = g;
            // red: ground truth only; green: prediction only; yellow: overlap
            if (gt.pixels[i] && pred.pixels[i]) { r8 = 255; g8 = 255; b8 = 0; }
            else if (gt.pixels[i]) { r8 = 255; g8 = 0; b8 = 0; }
            else if (pred.pixels[i]) { r8 = 0; g8 = 255; b8 = 0; }
            rgb[i * 3] = r8;
            rgb[i * 3 + 1] = g8;
            rgb[i * 3 + 2] = b8;
        }
        png::write_rgb((dir / (id + ".png")).string(), img.height, img.width, rgb);
    }
    write_resolved_config(cfg, cfg.out_dir, "overlay");
}

}  // namespace pseudoseg::cli
