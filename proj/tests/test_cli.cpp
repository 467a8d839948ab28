#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pseudoseg/cli.hpp"

using namespace pseudoseg;
namespace fs = std::filesystem;

namespace {

struct TempDirs {
    fs::path root;
    TempDirs() {
        root = fs::temp_directory_path() / "pseg_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempDirs() { fs::remove_all(root); }

    cli::RunConfig small_cfg() const {
        cli::RunConfig cfg;
        cfg.data_dir = (root / "data").string();
        cfg.cache_dir = (root / "cache").string();
        cfg.out_dir = (root / "out").string();
        cfg.image_size = 32;
        cfg.count = 12;
        cfg.seed = 5;
        cfg.c1 = 4;
        cfg.c2 = 8;
        cfg.c3 = 8;
        cfg.groups = 2;
        cfg.batch_size = 4;
        cfg.warmup_epochs = 3;
        cfg.epochs = 2;
        cfg.labeled_ratio = 0.5;
        cfg.fusion_k = 4;
        cfg.patch_size = 4;
        return cfg;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config json round trip and unknown-key rejection") {
    cli::RunConfig cfg;
    cfg.seed = 42;
    cfg.labeled_ratio = 0.25;
    auto back = cli::config_from_json(cli::config_to_json(cfg));
    CHECK(back.seed == 42);
    CHECK(back.labeled_ratio == 0.25);

    CHECK_THROWS_WITH_AS(cli::config_from_json(R"({"no_such_key": 1})"),
                         doctest::Contains("no_such_key"), std::invalid_argument);
    CHECK_THROWS(cli::config_from_json("[1,2,3]"));
}

TEST_CASE("overrides parse JSON values with precedence over the file") {
    cli::RunConfig cfg = cli::config_from_json(R"({"seed": 1, "epochs": 50})");
    cli::apply_override(cfg, "seed=9");
    cli::apply_override(cfg, "patchify=false");
    cli::apply_override(cfg, "lesion_shape=oval");
    cli::apply_override(cfg, "lr=0.0005");
    CHECK(cfg.seed == 9);
    CHECK(cfg.epochs == 50);
    CHECK(!cfg.patchify);
    CHECK(cfg.lesion_shape == "oval");
    CHECK(cfg.lr == 0.0005);

    CHECK_THROWS(cli::apply_override(cfg, "nonsense_key=1"));
    CHECK_THROWS(cli::apply_override(cfg, "no_equals_sign"));
}

TEST_CASE("PSEUDOSEG_SEED env var wins over config") {
    cli::RunConfig cfg;
    cfg.seed = 3;
    setenv("PSEUDOSEG_SEED", "777", 1);
    cli::apply_env_seed(cfg);
    unsetenv("PSEUDOSEG_SEED");
    CHECK(cfg.seed == 777);

    cli::apply_env_seed(cfg);  // unset: no change
    CHECK(cfg.seed == 777);

    setenv("PSEUDOSEG_SEED", "not_a_number", 1);
    CHECK_THROWS(cli::apply_env_seed(cfg));
    unsetenv("PSEUDOSEG_SEED");
}

TEST_CASE("config validation rejects bad ranges") {
    auto bad = [](const char* key, const char* val) {
        cli::RunConfig cfg;
        cli::apply_override(cfg, std::string(key) + "=" + val);
        return cli::config_from_json(cli::config_to_json(cfg));  // validate on parse
    };
    CHECK_THROWS(bad("image_size", "30"));
    CHECK_THROWS(bad("labeled_ratio", "0"));
    CHECK_THROWS(bad("reverse_ratio", "1.0"));
    CHECK_THROWS(bad("batch_size", "3"));
    CHECK_THROWS(bad("lesion_darkness", "1.5"));
}

TEST_CASE("missing upstream artifacts name the producing subcommand") {
    TempDirs td;
    auto cfg = td.small_cfg();
    CHECK_THROWS_WITH_AS(cli::cmd_filter(cfg), doctest::Contains("appg"), std::runtime_error);
    CHECK_THROWS_WITH_AS(cli::cmd_appg(cfg), doctest::Contains("synth"), std::runtime_error);
    CHECK_THROWS_WITH_AS(cli::cmd_train(cfg), doctest::Contains("synth"), std::runtime_error);
}

TEST_CASE("unsupported live backend names the adapter interfaces") {
    TempDirs td;
    auto cfg = td.small_cfg();
    cli::cmd_synth(cfg);
    cfg.backend = "live";
    CHECK_THROWS_WITH_AS(cli::cmd_appg(cfg), doctest::Contains("BoxProposerBackend"),
                         std::runtime_error);
}

TEST_CASE("full pipeline produces the documented artifacts and reruns identically") {
    TempDirs td;
    auto cfg = td.small_cfg();

    cli::cmd_synth(cfg);
    CHECK(fs::exists(fs::path(cfg.data_dir) / "dataset.json"));
    CHECK(fs::exists(fs::path(cfg.data_dir) / "synth_resolved_config.json"));
    CHECK(fs::exists(fs::path(cfg.data_dir) / "images" / "case_00000.png"));
    CHECK(fs::exists(fs::path(cfg.data_dir) / "masks" / "case_00011.png"));

    cli::cmd_appg(cfg);
    CHECK(fs::exists(fs::path(cfg.cache_dir) / "manifest.json"));

    cli::cmd_filter(cfg);
    CHECK(fs::exists(fs::path(cfg.cache_dir) / "filtered.json"));

    // train before warmup points at the missing teacher
    CHECK_THROWS_WITH_AS(cli::cmd_train(cfg), doctest::Contains("warmup"), std::runtime_error);

    cli::cmd_warmup(cfg);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "static_teacher.ckpt"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "warmup_losses.json"));

    cli::cmd_train(cfg);
    for (const char* f : {"splits.json", "metrics.jsonl", "best.ckpt", "trainer.ckpt",
                          "test_metrics.json"})
        CHECK(fs::exists(fs::path(cfg.out_dir) / f));

    auto rec = cli::cmd_eval(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string(), "test");
    CHECK(rec.n_images > 0);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "eval_test.json"));
    CHECK_THROWS(cli::cmd_eval(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string(), "bogus"));

    cli::cmd_overlay(cfg, (fs::path(cfg.out_dir) / "best.ckpt").string());
    CHECK(fs::exists(fs::path(cfg.out_dir) / "overlays"));
    int n_overlays = 0;
    for ([[maybe_unused]] const auto& e :
         fs::directory_iterator(fs::path(cfg.out_dir) / "overlays"))
        ++n_overlays;
    CHECK(n_overlays == rec.n_images);

    // byte-identical reruns of the data-producing stages
    std::string dataset = slurp(fs::path(cfg.data_dir) / "dataset.json");
    std::string img0 = slurp(fs::path(cfg.data_dir) / "images" / "case_00000.png");
    std::string manifest = slurp(fs::path(cfg.cache_dir) / "manifest.json");
    std::string filtered = slurp(fs::path(cfg.cache_dir) / "filtered.json");
    cli::cmd_synth(cfg);
    cli::cmd_appg(cfg);
    cli::cmd_filter(cfg);
    CHECK(slurp(fs::path(cfg.data_dir) / "dataset.json") == dataset);
    CHECK(slurp(fs::path(cfg.data_dir) / "images" / "case_00000.png") == img0);
    CHECK(slurp(fs::path(cfg.cache_dir) / "manifest.json") == manifest);
    CHECK(slurp(fs::path(cfg.cache_dir) / "filtered.json") == filtered);
}

TEST_CASE("train rerun with the same seed is byte-identical") {
    TempDirs td;
    auto cfg = td.small_cfg();
    cfg.epochs = 1;
    cli::cmd_synth(cfg);
    cli::cmd_appg(cfg);
    cli::cmd_filter(cfg);
    cli::cmd_warmup(cfg);

    cli::cmd_train(cfg);
    std::string metrics = slurp(fs::path(cfg.out_dir) / "metrics.jsonl");
    std::string best = slurp(fs::path(cfg.out_dir) / "best.ckpt");
    cli::cmd_train(cfg);
    CHECK(slurp(fs::path(cfg.out_dir) / "metrics.jsonl") == metrics);
    CHECK(slurp(fs::path(cfg.out_dir) / "best.ckpt") == best);
}
